"""Chat-completion access for the generation pipeline.

Providers implement ``complete(ChatRequest) -> str`` and make exactly one
attempt per call. Retries, backoff and usage accounting live in
``complete_with_retry``; response hardening in ``parse_json_list``.
"""

from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Protocol

import httpx

from .errors import ContractViolation, ParseError, ScriptMissError
from .transport import RetryPolicy, call_with_retry, make_client, post_json

log = logging.getLogger(__name__)

LLM_URL_ENV = "SEMCACHE_LLM_URL"
REPAIR_INSTRUCTION = "Return ONLY a JSON array of strings."


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_prompt: str
    temperature: float = 0.0
    max_tokens: int = 1024
    model_name: str = "default"
    # routing metadata for scripted providers and logs; never sent on the wire
    task: str = ""
    subject: str = ""

    def __post_init__(self) -> None:
        if not self.system_prompt.strip() or not self.user_prompt.strip():
            raise ValueError("chat prompts must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


class LlmProvider(Protocol):
    def complete(self, req: ChatRequest) -> str: ...


class UsageLedger:
    """Thread-safe request/character counters (monotone)."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.requests_sent = 0
        self.successes = 0
        self.failures = 0
        self.prompt_chars = 0
        self.completion_chars = 0

    def record(self, req: ChatRequest, completion: str | None) -> None:
        with self._lock:
            self.requests_sent += 1
            self.prompt_chars += len(req.system_prompt) + len(req.user_prompt)
            if completion is None:
                self.failures += 1
            else:
                self.successes += 1
                self.completion_chars += len(completion)

    def as_dict(self) -> dict[str, int]:
        with self._lock:
            return {
                "requests_sent": self.requests_sent,
                "successes": self.successes,
                "failures": self.failures,
                "prompt_chars": self.prompt_chars,
                "completion_chars": self.completion_chars,
            }


def complete_with_retry(
    provider: LlmProvider,
    req: ChatRequest,
    max_retries: int = 3,
    ledger: UsageLedger | None = None,
    *,
    policy: RetryPolicy | None = None,
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
) -> str:
    """First successful completion of ``req``.

    Transient failures (transport, 5xx, 429) are retried up to
    ``max_retries`` times with full-jitter exponential backoff (0.5 s base,
    factor 2). Any other provider error fails immediately.
    """
    policy = policy or RetryPolicy(max_retries=max_retries)
    ledger = ledger if ledger is not None else UsageLedger()
    result: list[str] = []

    def attempt() -> str:
        result.clear()
        text = provider.complete(req)
        result.append(text)
        return text

    def account(ok: bool) -> None:
        ledger.record(req, result[0] if ok else None)

    return call_with_retry(attempt, policy, sleep=sleep, rng=rng, on_attempt=account)


def parse_json_list(raw: str) -> list[str]:
    """First well-formed JSON array of strings found anywhere in ``raw``.

    Surrounding prose and code fences are ignored; items are trimmed and
    empty items dropped.
    """
    decoder = json.JSONDecoder()
    start = raw.find("[")
    while start != -1:
        try:
            value, _ = decoder.raw_decode(raw, start)
        except json.JSONDecodeError:
            value = None
        if isinstance(value, list) and all(isinstance(v, str) for v in value):
            return [v.strip() for v in value if v.strip()]
        start = raw.find("[", start + 1)
    raise ParseError("no JSON array of strings in model response", raw)


def ask_json_list(
    provider: LlmProvider,
    req: ChatRequest,
    *,
    max_retries: int = 3,
    ledger: UsageLedger | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> list[str]:
    """Complete ``req`` and parse a string list, with one repair re-prompt.

    Raises ``ParseError`` if the repaired response is still unparseable.
    """
    raw = complete_with_retry(provider, req, max_retries, ledger, sleep=sleep)
    try:
        return parse_json_list(raw)
    except ParseError:
        log.warning("unparseable %s response for %r; re-prompting", req.task, req.subject)
    repair = ChatRequest(
        system_prompt=req.system_prompt,
        user_prompt=f"{req.user_prompt}\n\n{REPAIR_INSTRUCTION}",
        temperature=req.temperature,
        max_tokens=req.max_tokens,
        model_name=req.model_name,
        task=f"{req.task}:repair",
        subject=req.subject,
    )
    return parse_json_list(complete_with_retry(provider, repair, max_retries, ledger, sleep=sleep))


class ScriptedProvider:
    """Deterministic provider answering from ``script[task][subject]``.

    List values are returned JSON-encoded, strings verbatim. A request with
    no entry raises ``ScriptMissError`` instead of inventing a response.
    """

    def __init__(self, script: dict[str, dict[str, Any]]):
        self.script = script
        self._lock = threading.Lock()
        self.calls: list[tuple[str, str]] = []

    @classmethod
    def from_file(cls, path: str | Path) -> ScriptedProvider:
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def complete(self, req: ChatRequest) -> str:
        with self._lock:
            self.calls.append((req.task, req.subject))
        try:
            value = self.script[req.task][req.subject]
        except KeyError:
            raise ScriptMissError(f"no scripted response for task={req.task!r} subject={req.subject!r}") from None
        return value if isinstance(value, str) else json.dumps(value, ensure_ascii=False)


class ChatCompletionsProvider:
    """Client for ``POST {base_url}/v1/chat/completions`` (one attempt per call)."""

    def __init__(
        self,
        base_url: str | None = None,
        model_name: str = "default",
        *,
        timeout_ms: int = 60_000,
        client: httpx.Client | None = None,
    ):
        base_url = base_url or os.environ.get(LLM_URL_ENV)
        if not base_url:
            raise ValueError(f"no LLM endpoint configured (set {LLM_URL_ENV} or llm.endpoint_url)")
        self.url = base_url.rstrip("/") + "/v1/chat/completions"
        self.model_name = model_name
        self._client = make_client(timeout_ms, client)

    def complete(self, req: ChatRequest) -> str:
        body = {
            "model": req.model_name if req.model_name != "default" else self.model_name,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
        }
        payload = post_json(self._client, self.url, body)
        try:
            content = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise ContractViolation(f"{self.url}: response lacks choices[0].message.content") from None
        if not isinstance(content, str):
            raise ContractViolation(f"{self.url}: message content is not a string")
        return content
