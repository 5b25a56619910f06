from __future__ import annotations

import json
import math

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracle
from semcache_testgen import (
    EmbeddingProviderConfig,
    HashingEmbedder,
    RemoteEmbedder,
    cosine_similarity,
    make_embedder,
    tokenize,
)
from semcache_testgen.errors import ContractViolation, EmbeddingError, ProviderError

words = st.text(alphabet="abcdefghij ", min_size=1, max_size=40).filter(lambda s: tokenize(s))


def test_embed_is_deterministic_and_unit_length(embedder: HashingEmbedder) -> None:
    a, b = embedder.embed(["What is AT1?", "What is AT1?"])
    assert a == b
    assert a.dim == 256
    assert math.isclose(float(np.linalg.norm(a.values)), 1.0, abs_tol=1e-12)
    assert HashingEmbedder().embed(["What is AT1?"])[0] == a


def test_case_and_whitespace_do_not_matter(embedder: HashingEmbedder) -> None:
    a, b = embedder.embed(["what is AT1", "what is at1 "])
    assert a == b
    assert cosine_similarity(a, b) == 1.0


@given(words)
def test_matches_independent_oracle(text: str) -> None:
    assert HashingEmbedder().embed([text])[0].tolist() == oracle.embed(text)


def test_seed_changes_the_hashing() -> None:
    text = "word limit for the background section"
    assert HashingEmbedder(seed=0).embed([text])[0] != HashingEmbedder(seed=7).embed([text])[0]
    assert HashingEmbedder(seed=7).fingerprint == "hashing-fnv1a64:dim=256:seed=7"


def test_text_without_tokens_is_an_error(embedder: HashingEmbedder) -> None:
    with pytest.raises(EmbeddingError):
        embedder.embed(["?!"])
    with pytest.raises(ValueError):
        embedder.embed([])
    with pytest.raises(ValueError):
        embedder.embed(["   "])


def test_cosine_known_value() -> None:
    assert cosine_similarity([1, 2, 3], [4, 5, 6]) == pytest.approx(32 / (math.sqrt(14) * math.sqrt(77)), abs=1e-12)
    assert cosine_similarity([1, 2, 3], [4, 5, 6]) == pytest.approx(0.974631846, abs=1e-9)
    assert cosine_similarity([1, 0], [-1, 0]) == -1.0


@given(
    st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3),
    st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3),
    st.floats(0.01, 100),
)
def test_cosine_symmetric_and_scale_invariant(a: list[float], b: list[float], k: float) -> None:
    if not any(a) or not any(b) or sum(x * x for x in a) < 1e-6 or sum(x * x for x in b) < 1e-6:
        return
    assert cosine_similarity(a, b) == cosine_similarity(b, a)
    assert -1.0 <= cosine_similarity(a, b) <= 1.0
    assert cosine_similarity([k * x for x in a], b) == pytest.approx(cosine_similarity(a, b), abs=1e-9)


def test_cosine_rejects_zero_and_mismatched_vectors() -> None:
    with pytest.raises(ValueError):
        cosine_similarity([0, 0], [1, 0])
    with pytest.raises(ValueError):
        cosine_similarity([1, 0], [1, 0, 0])


def test_disjoint_tokens_are_near_orthogonal(embedder: HashingEmbedder) -> None:
    a, b = embedder.embed(["penalty late submission", "presentation minutes group"])
    assert abs(cosine_similarity(a, b)) < 0.4


def _remote(handler, **kw) -> RemoteEmbedder:
    cfg = EmbeddingProviderConfig(kind="remote", endpoint_url="http://embed", model_name="m", dim=3, **kw)
    return RemoteEmbedder(cfg, client=httpx.Client(transport=httpx.MockTransport(handler)), sleep=lambda s: None)


def test_remote_embedder_reorders_by_index() -> None:
    seen = []

    def handler(request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        seen.append(body)
        data = [{"index": i, "embedding": [float(i + 1), 0.0, 1.0]} for i in range(len(body["input"]))]
        return httpx.Response(200, json={"data": data[::-1]})

    out = _remote(handler).embed(["a", "b"])
    assert [e.tolist() for e in out] == [[1.0, 0.0, 1.0], [2.0, 0.0, 1.0]]
    assert seen == [{"model": "m", "input": ["a", "b"]}]


def test_remote_embedder_batches_preserve_order() -> None:
    def handler(request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        data = [{"index": i, "embedding": [float(t), 1.0, 0.0]} for i, t in enumerate(body["input"])]
        return httpx.Response(200, json={"data": data})

    texts = [str(i) for i in range(10)]
    out = _remote(handler, batch_size=3, concurrency=3).embed(texts)
    assert [e.tolist()[0] for e in out] == [float(i) for i in range(10)]


def test_remote_embedder_dim_mismatch_is_contract_violation() -> None:
    def handler(request: httpx.Request) -> httpx.Response:
        return httpx.Response(200, json={"data": [{"index": 0, "embedding": [1.0, 2.0]}]})

    with pytest.raises(ContractViolation, match="dim"):
        _remote(handler).embed(["a"])


def test_remote_embedder_retries_then_gives_up() -> None:
    calls = 0

    def handler(request: httpx.Request) -> httpx.Response:
        nonlocal calls
        calls += 1
        return httpx.Response(503)

    emb = _remote(handler, max_retries=2)
    with pytest.raises(ProviderError) as info:
        emb.embed(["a"])
    assert calls == 3 and info.value.attempts == 3 and emb.attempts == 3


def test_make_embedder_selects_kind() -> None:
    assert isinstance(make_embedder(EmbeddingProviderConfig(dim=32)), HashingEmbedder)
    with pytest.raises(ValueError):
        EmbeddingProviderConfig(kind="remote")
