"""Embedding-keyed semantic cache with a pluggable second-stage scorer.

A lookup embeds the query, pulls ``top_k_candidates`` nearest entries from
the vector store, scores each with the configured scorer and hits when the
best score reaches the threshold. Nearest-neighbour search always returns
something once the cache is non-empty; the threshold is what turns that into
a hit/miss decision.

The cache never reads ``CacheEntry.group_id``. It exists only so evaluation
code can judge hits against ground truth.
"""

from __future__ import annotations

import json
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import httpx

from .embedding import SCORE_DECIMALS, Embedder, Embedding, cosine_similarity
from .errors import ContractViolation, ScriptMissError
from .transport import RetryPolicy, call_with_retry, make_client, post_json
from .vector_store import VectorStore


@dataclass
class CacheEntry:
    entry_id: str
    query_text: str
    embedding: Embedding
    answer: str
    group_id: str | None = None
    last_access: int = 0


class SimilarityScorer(Protocol):
    name: str

    def score(self, query_text: str, query_embedding: Embedding, candidate: CacheEntry) -> float: ...

    def score_many(
        self, query_text: str, query_embedding: Embedding, candidates: Sequence[CacheEntry]
    ) -> list[float]: ...


def rescaled_cosine(a: Embedding, b: Embedding) -> float:
    """Cosine similarity mapped from [-1, 1] onto [0, 1] via (c + 1) / 2."""
    return round((cosine_similarity(a, b) + 1.0) / 2.0, SCORE_DECIMALS)


class CosineScorer:
    name = "cosine"

    def score(self, query_text: str, query_embedding: Embedding, candidate: CacheEntry) -> float:
        return rescaled_cosine(query_embedding, candidate.embedding)

    def score_many(self, query_text, query_embedding, candidates):
        return [self.score(query_text, query_embedding, c) for c in candidates]


class ScriptedScorer:
    """Table-driven scorer for tests.

    ``table`` maps ``(query_text, cached_query_text)`` to a score; the
    reversed pair is tried as well. Unlisted pairs get ``default`` or raise
    ``ScriptMissError`` when no default is set.
    """

    name = "scripted"

    def __init__(self, table: dict[tuple[str, str], float], default: float | None = None):
        for value in [*table.values(), *([default] if default is not None else [])]:
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"scripted score {value} outside [0, 1]")
        self.table = dict(table)
        self.default = default

    @classmethod
    def from_file(cls, path: str | Path) -> ScriptedScorer:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        table = {(p["query"], p["candidate"]): float(p["score"]) for p in data.get("pairs", [])}
        return cls(table, data.get("default"))

    def score(self, query_text: str, query_embedding: Embedding, candidate: CacheEntry) -> float:
        key = (query_text, candidate.query_text)
        if key in self.table:
            return self.table[key]
        if key[::-1] in self.table:
            return self.table[key[::-1]]
        if self.default is None:
            raise ScriptMissError(f"no scripted score for {key!r}")
        return self.default

    def score_many(self, query_text, query_embedding, candidates):
        return [self.score(query_text, query_embedding, c) for c in candidates]


class RemotePairScorer:
    """Client for ``POST {endpoint}/score``, one request per lookup."""

    name = "remote_pair"

    def __init__(
        self,
        endpoint_url: str,
        *,
        timeout_ms: int = 30_000,
        max_retries: int = 3,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.url = endpoint_url.rstrip("/") + "/score"
        self._client = make_client(timeout_ms, client)
        self._policy = RetryPolicy(max_retries=max_retries)
        self._sleep = sleep

    def score_many(self, query_text, query_embedding, candidates):
        if not candidates:
            return []
        body = {"query": query_text, "candidates": [c.query_text for c in candidates]}
        payload = call_with_retry(
            lambda: post_json(self._client, self.url, body), self._policy, sleep=self._sleep
        )
        scores = payload.get("scores") if isinstance(payload, dict) else None
        if not isinstance(scores, list) or len(scores) != len(candidates):
            raise ContractViolation(f"expected {len(candidates)} scores from {self.url}")
        out = []
        for s in scores:
            if isinstance(s, bool) or not isinstance(s, (int, float)) or not 0.0 <= s <= 1.0:
                raise ContractViolation(f"score {s!r} from {self.url} outside [0, 1]")
            out.append(float(s))
        return out

    def score(self, query_text, query_embedding, candidate):
        return self.score_many(query_text, query_embedding, [candidate])[0]


@dataclass
class CacheConfig:
    threshold: float = 0.9
    top_k_candidates: int = 5
    capacity: int | None = None  # None = unbounded
    scorer: SimilarityScorer = field(default_factory=CosineScorer)

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.top_k_candidates < 1:
            raise ValueError("top_k_candidates must be >= 1")
        if self.capacity is not None and self.capacity < 1:
            raise ValueError("capacity must be positive or None")


@dataclass(frozen=True)
class LookupResult:
    hit: bool
    entry: CacheEntry | None = None
    score: float | None = None
    # best scorer value among the candidates, reported on misses too
    best_score: float | None = None


class SemanticCache:
    """Single-writer cache; lookups are read-mostly (a hit refreshes LRU
    recency)."""

    def __init__(self, embedder: Embedder, config: CacheConfig | None = None):
        self.embedder = embedder
        self.config = config or CacheConfig()
        self._store = VectorStore(embedder.dim)
        self._entries: OrderedDict[str, CacheEntry] = OrderedDict()
        self._clock = 0
        self._next_id = 0
        self.evictions = 0

    def __len__(self) -> int:
        return len(self._entries)

    def size(self) -> int:
        return len(self._entries)

    def entries(self) -> list[CacheEntry]:
        """Current entries, least recently used first."""
        return list(self._entries.values())

    def _tick(self) -> int:
        self._clock += 1
        return self._clock

    def lookup(self, query_text: str) -> LookupResult:
        if not query_text.strip():
            raise ValueError("query_text must be non-empty")
        (qe,) = self.embedder.embed([query_text])
        return self.lookup_embedding(query_text, qe)

    def lookup_embedding(self, query_text: str, qe: Embedding) -> LookupResult:
        neighbors = self._store.top_k(qe, self.config.top_k_candidates)
        if not neighbors:
            return LookupResult(hit=False)
        candidates = [self._entries[n.entry_id] for n in neighbors]
        scores = self.config.scorer.score_many(query_text, qe, candidates)
        if len(scores) != len(candidates):
            raise ContractViolation("scorer returned the wrong number of scores")
        # neighbors arrive ordered by raw cosine desc, then insertion order, so
        # the first maximum already honours both tie-breaks
        best = 0
        for i, s in enumerate(scores):
            if not 0.0 <= s <= 1.0:
                raise ContractViolation(f"scorer {self.config.scorer.name} produced {s} outside [0, 1]")
            if s > scores[best]:
                best = i
        best_score = scores[best]
        if best_score < self.config.threshold:
            return LookupResult(hit=False, best_score=best_score)
        entry = candidates[best]
        entry.last_access = self._tick()
        self._entries.move_to_end(entry.entry_id)
        return LookupResult(hit=True, entry=entry, score=best_score, best_score=best_score)

    def insert(self, query_text: str, answer: str, group_id: str | None = None) -> str:
        if not query_text.strip():
            raise ValueError("query_text must be non-empty")
        (qe,) = self.embedder.embed([query_text])
        return self.insert_embedding(query_text, qe, answer, group_id)

    def insert_embedding(
        self, query_text: str, qe: Embedding, answer: str, group_id: str | None = None
    ) -> str:
        cap = self.config.capacity
        while cap is not None and len(self._entries) >= cap:
            victim, _ = self._entries.popitem(last=False)
            self._store.remove(victim)
            self.evictions += 1
        entry_id = f"e{self._next_id}"
        self._next_id += 1
        self._store.insert(entry_id, qe)
        self._entries[entry_id] = CacheEntry(
            entry_id=entry_id,
            query_text=query_text,
            embedding=qe,
            answer=answer,
            group_id=group_id,
            last_access=self._tick(),
        )
        return entry_id
