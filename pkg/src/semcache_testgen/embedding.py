"""Text embeddings and the cosine similarity primitive.

Two providers share one interface (``dim``, ``fingerprint``, ``embed``):

* ``HashingEmbedder`` -- deterministic bag-of-words feature hashing. Tokens
  are lowercase alphanumeric runs; each token is hashed with 64-bit FNV-1a
  (seeded by prefixing the seed as 8 little-endian bytes), the hash modulo
  ``dim`` picks a bucket and bit 63 picks the sign (+1 when clear). Counts
  are accumulated and the vector is L2-normalized, so cosine similarity
  between two texts tracks their token overlap.
* ``RemoteEmbedder`` -- a client for an OpenAI-style ``/v1/embeddings``
  endpoint.
"""

from __future__ import annotations

import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Protocol, Sequence

import httpx
import numpy as np

from .errors import ContractViolation, EmbeddingError
from .transport import RetryPolicy, call_with_retry, make_client, post_json

# Similarities are rounded to this many decimals so that mathematically equal
# values compare equal regardless of floating-point summation order.
SCORE_DECIMALS = 12

DEFAULT_DIM = 256

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_SPLIT = re.compile(r"[\W_]+")


class Embedding:
    """Immutable fixed-length float64 vector."""

    __slots__ = ("values",)

    def __init__(self, values: Iterable[float] | np.ndarray):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("embedding must be a non-empty 1-D vector")
        if not np.isfinite(arr).all():
            raise ValueError("embedding values must be finite")
        arr.flags.writeable = False
        self.values = arr

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def tolist(self) -> list[float]:
        return self.values.tolist()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Embedding):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        return hash(self.values.tobytes())

    def __repr__(self) -> str:
        return f"Embedding(dim={self.dim})"


def _as_floats(v: Embedding | Sequence[float] | np.ndarray) -> list[float]:
    if isinstance(v, Embedding):
        return v.values.tolist()
    return [float(x) for x in v]


def cosine_similarity(a, b) -> float:
    """dot(a, b) / (|a| |b|), clamped to [-1, 1] and rounded to
    ``SCORE_DECIMALS``. Sums use ``math.fsum`` so the result does not depend
    on the order of the terms, which keeps the function exactly symmetric.
    """
    va, vb = _as_floats(a), _as_floats(b)
    if len(va) != len(vb):
        raise ValueError(f"dimension mismatch: {len(va)} vs {len(vb)}")
    na = math.sqrt(math.fsum(x * x for x in va))
    nb = math.sqrt(math.fsum(x * x for x in vb))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    c = math.fsum(x * y for x, y in zip(va, vb)) / (na * nb)
    return round(min(1.0, max(-1.0, c)), SCORE_DECIMALS)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return [t for t in _SPLIT.split(text.lower()) if t]


def fnv1a_64(data: bytes, seed: int = 0) -> int:
    h = FNV64_OFFSET
    for byte in seed.to_bytes(8, "little", signed=False) + data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


class Embedder(Protocol):
    dim: int

    @property
    def fingerprint(self) -> str: ...

    def embed(self, texts: Sequence[str]) -> list[Embedding]: ...


def _check_texts(texts: Sequence[str]) -> None:
    if isinstance(texts, str):
        raise TypeError("embed() takes a list of strings, not a single string")
    if not texts:
        raise ValueError("embed() needs at least one text")
    for i, t in enumerate(texts):
        if not t.strip():
            raise ValueError(f"text #{i} is empty")


class HashingEmbedder:
    """Deterministic feature-hashing embedder; ``embed`` is a pure function
    of the text."""

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self._slots: dict[str, tuple[int, float]] = {}

    @property
    def fingerprint(self) -> str:
        return f"hashing-fnv1a64:dim={self.dim}:seed={self.seed}"

    def token_slot(self, token: str) -> tuple[int, float]:
        slot = self._slots.get(token)
        if slot is None:
            h = fnv1a_64(token.encode("utf-8"), self.seed)
            slot = (h % self.dim, -1.0 if h >> 63 else 1.0)
            self._slots[token] = slot
        return slot

    def raw_vector(self, text: str) -> np.ndarray:
        """Signed bucket counts before normalization."""
        vec = np.zeros(self.dim, dtype=np.float64)
        for tok in tokenize(text):
            bucket, sign = self.token_slot(tok)
            vec[bucket] += sign
        return vec

    def embed(self, texts: Sequence[str]) -> list[Embedding]:
        _check_texts(texts)
        out = []
        for text in texts:
            vec = self.raw_vector(text)
            norm = math.sqrt(math.fsum(vec * vec))
            if norm == 0.0:
                raise EmbeddingError(f"text has no usable tokens: {text!r}")
            out.append(Embedding(vec / norm))
        return out


class ProviderKind(str, Enum):
    REMOTE = "remote"
    DETERMINISTIC_LOCAL = "deterministic_local"


@dataclass(frozen=True)
class EmbeddingProviderConfig:
    kind: ProviderKind = ProviderKind.DETERMINISTIC_LOCAL
    endpoint_url: str | None = None
    model_name: str | None = None
    dim: int = DEFAULT_DIM
    timeout_ms: int = 30_000
    max_retries: int = 3
    concurrency: int = 4
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ProviderKind(self.kind))
        if self.dim < 1 or self.timeout_ms < 1 or self.max_retries < 0:
            raise ValueError("dim and timeout_ms must be positive, max_retries non-negative")
        if self.kind is ProviderKind.REMOTE and not (self.endpoint_url and self.model_name):
            raise ValueError("remote embedding provider needs endpoint_url and model_name")


class RemoteEmbedder:
    """Client for ``POST {endpoint}/v1/embeddings``.

    Vectors are returned as delivered (no re-normalization); results are put
    back in input order using each item's ``index``.
    """

    def __init__(
        self,
        config: EmbeddingProviderConfig,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self.dim = config.dim
        self._client = make_client(config.timeout_ms, client)
        self._sleep = sleep
        self._policy = RetryPolicy(max_retries=config.max_retries)
        self.attempts = 0

    @property
    def fingerprint(self) -> str:
        return f"remote:{self.config.model_name}:dim={self.dim}"

    def _count(self, ok: bool) -> None:
        self.attempts += 1

    def _embed_batch(self, batch: list[str]) -> list[Embedding]:
        url = self.config.endpoint_url.rstrip("/") + "/v1/embeddings"
        body = {"model": self.config.model_name, "input": batch}
        payload = call_with_retry(
            lambda: post_json(self._client, url, body),
            self._policy,
            sleep=self._sleep,
            on_attempt=self._count,
        )
        try:
            items = sorted(payload["data"], key=lambda item: item["index"])
            vectors = [item["embedding"] for item in items]
        except (KeyError, TypeError) as exc:
            raise ContractViolation(f"malformed embeddings response: {exc!r}") from None
        if [item["index"] for item in items] != list(range(len(batch))):
            raise ContractViolation(f"expected indices 0..{len(batch) - 1} in embeddings response")
        out = []
        for vec in vectors:
            if len(vec) != self.dim:
                raise ContractViolation(f"expected dim {self.dim}, service returned {len(vec)}")
            try:
                out.append(Embedding(vec))
            except ValueError as exc:
                raise ContractViolation(str(exc)) from None
        return out

    def embed(self, texts: Sequence[str]) -> list[Embedding]:
        _check_texts(texts)
        texts = list(texts)
        size = self.config.batch_size
        batches = [texts[i : i + size] for i in range(0, len(texts), size)]
        if len(batches) == 1:
            return self._embed_batch(batches[0])
        with ThreadPoolExecutor(max_workers=self.config.concurrency) as pool:
            results = list(pool.map(self._embed_batch, batches))
        return [e for chunk in results for e in chunk]


def make_embedder(config: EmbeddingProviderConfig, client: httpx.Client | None = None) -> Embedder:
    if config.kind is ProviderKind.REMOTE:
        return RemoteEmbedder(config, client=client)
    return HashingEmbedder(dim=config.dim, seed=config.seed)
