from __future__ import annotations

import json
import random

import httpx
import pytest

from semcache_testgen import (
    ChatCompletionsProvider,
    ChatRequest,
    ScriptedProvider,
    UsageLedger,
    complete_with_retry,
    parse_json_list,
)
from semcache_testgen.errors import ContractViolation, ParseError, ProviderError, ScriptMissError
from semcache_testgen.llm import REPAIR_INSTRUCTION, ask_json_list
from semcache_testgen.transport import RetryPolicy

REQ = ChatRequest("system", "user", task="generate_question", subject="s")


def _provider(statuses: list[int], content: str = "hi") -> tuple[ChatCompletionsProvider, list[dict]]:
    seen: list[dict] = []

    def handler(request: httpx.Request) -> httpx.Response:
        seen.append(json.loads(request.content))
        status = statuses.pop(0) if statuses else 200
        if status != 200:
            return httpx.Response(status, json={"error": "x"})
        return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": content}}]})

    client = httpx.Client(transport=httpx.MockTransport(handler))
    return ChatCompletionsProvider("http://llm", "m", client=client), seen


def test_request_shape() -> None:
    provider, seen = _provider([])
    assert provider.complete(ChatRequest("sys", "usr", temperature=0.8, max_tokens=50)) == "hi"
    assert seen == [{
        "model": "m",
        "temperature": 0.8,
        "max_tokens": 50,
        "messages": [{"role": "system", "content": "sys"}, {"role": "user", "content": "usr"}],
    }]


@pytest.mark.parametrize("status", [429, 500, 503])
def test_transient_errors_are_retried(status: int) -> None:
    provider, seen = _provider([status, status])
    delays: list[float] = []
    ledger = UsageLedger()
    assert complete_with_retry(provider, REQ, 3, ledger, sleep=delays.append) == "hi"
    assert len(seen) == 3 and len(delays) == 2
    assert ledger.as_dict()["requests_sent"] == 3
    assert ledger.successes == 1 and ledger.failures == 2


def test_retries_exhausted_reports_attempts() -> None:
    provider, seen = _provider([503] * 10)
    delays: list[float] = []
    with pytest.raises(ProviderError) as info:
        complete_with_retry(provider, REQ, 3, sleep=delays.append, rng=random.Random(0))
    assert info.value.attempts == 4 and len(seen) == 4
    assert len(delays) == 3
    for i, d in enumerate(delays):
        assert 0.0 <= d <= 0.5 * 2**i


def test_client_error_fails_fast() -> None:
    provider, seen = _provider([400])
    delays: list[float] = []
    with pytest.raises(ProviderError) as info:
        complete_with_retry(provider, REQ, 3, sleep=delays.append)
    assert len(seen) == 1 and delays == [] and info.value.attempts == 1 and info.value.status == 400


def test_missing_content_is_contract_violation() -> None:
    client = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(200, json={"choices": []})))
    with pytest.raises(ContractViolation):
        ChatCompletionsProvider("http://llm", client=client).complete(REQ)


def test_backoff_delays_are_capped_full_jitter() -> None:
    policy = RetryPolicy()
    rng = random.Random(1)
    for i in range(12):
        assert 0.0 <= policy.delay(i, rng) <= min(30.0, 0.5 * 2**i)


@pytest.mark.parametrize(
    "raw, expected",
    [
        ('["a", "b"]', ["a", "b"]),
        ('Sure! Here:\n```json\n[" a ", "", "b"]\n```', ["a", "b"]),
        ('[1, 2] then ["x"]', ["x"]),
        ("[]", []),
    ],
)
def test_parse_json_list(raw: str, expected: list[str]) -> None:
    assert parse_json_list(raw) == expected


@pytest.mark.parametrize("raw", ["no list here", "[unclosed", '{"a": 1}'])
def test_parse_json_list_rejects(raw: str) -> None:
    with pytest.raises(ParseError):
        parse_json_list(raw)


def test_scripted_provider() -> None:
    p = ScriptedProvider({"generate_question": {"s": ["Q?"]}})
    assert p.complete(REQ) == '["Q?"]'
    assert p.calls == [("generate_question", "s")]
    with pytest.raises(ScriptMissError):
        p.complete(ChatRequest("s", "u", task="generate_question", subject="other"))


def test_unparseable_reply_gets_one_repair() -> None:
    p = ScriptedProvider({
        "extract_facts": {"d": "I cannot do JSON"},
        "extract_facts:repair": {"d": ["fact"]},
    })
    req = ChatRequest("s", "u", task="extract_facts", subject="d")
    assert ask_json_list(p, req, sleep=lambda s: None) == ["fact"]
    assert p.calls == [("extract_facts", "d"), ("extract_facts:repair", "d")]

    bad = ScriptedProvider({"extract_facts": {"d": "nope"}, "extract_facts:repair": {"d": "still nope"}})
    with pytest.raises(ParseError):
        ask_json_list(bad, req, sleep=lambda s: None)
    assert REPAIR_INSTRUCTION == "Return ONLY a JSON array of strings."


def test_provider_needs_endpoint(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv("SEMCACHE_LLM_URL", raising=False)
    with pytest.raises(ValueError):
        ChatCompletionsProvider()
    monkeypatch.setenv("SEMCACHE_LLM_URL", "http://env-llm/")
    assert ChatCompletionsProvider().url == "http://env-llm/v1/chat/completions"


def test_api_key_goes_in_bearer_header(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("SEMCACHE_API_KEY", "sekret")
    auth = []

    def handler(request: httpx.Request) -> httpx.Response:
        auth.append(request.headers.get("authorization"))
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    ChatCompletionsProvider("http://llm", client=httpx.Client(transport=httpx.MockTransport(handler))).complete(REQ)
    assert auth == ["Bearer sekret"]
