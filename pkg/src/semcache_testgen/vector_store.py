"""Exact (brute-force) cosine k-nearest-neighbour store."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedding import Embedding, cosine_similarity

# numpy dot products are only used to shortlist; anything within this margin
# of the k-th score is rescored exactly
_SHORTLIST_MARGIN = 1e-9


@dataclass(frozen=True)
class Neighbor:
    entry_id: str
    score: float


class VectorStore:
    """Embeddings keyed by entry id, kept in insertion order.

    ``top_k`` is exact: results and scores equal a full sort of
    ``cosine_similarity`` over every entry, descending, with ties broken by
    insertion order (earlier first).
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self._ids: list[str] = []
        self._index: dict[str, int] = {}
        self._raw: list[Embedding] = []
        self._unit = np.empty((16, dim), dtype=np.float64)

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, entry_id: object) -> bool:
        return entry_id in self._index

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def insert(self, entry_id: str, e: Embedding) -> None:
        if entry_id in self._index:
            raise KeyError(f"duplicate entry id {entry_id!r}")
        if e.dim != self.dim:
            raise ValueError(f"embedding dim {e.dim} does not match store dim {self.dim}")
        norm = np.linalg.norm(e.values)
        if norm == 0.0:
            raise ValueError("cannot index a zero vector")
        n = len(self._ids)
        if n == self._unit.shape[0]:
            grown = np.empty((2 * n, self.dim), dtype=np.float64)
            grown[:n] = self._unit[:n]
            self._unit = grown
        self._unit[n] = e.values / norm
        self._index[entry_id] = n
        self._ids.append(entry_id)
        self._raw.append(e)

    def get(self, entry_id: str) -> Embedding:
        return self._raw[self._index[entry_id]]

    def remove(self, entry_id: str) -> bool:
        pos = self._index.pop(entry_id, None)
        if pos is None:
            return False
        n = len(self._ids)
        self._unit[pos : n - 1] = self._unit[pos + 1 : n]
        del self._ids[pos]
        del self._raw[pos]
        for i in range(pos, n - 1):
            self._index[self._ids[i]] = i
        return True

    def scores(self, query: Embedding) -> np.ndarray:
        """Float64 cosine of ``query`` against every entry, in insertion
        order. Fast but not rounded; ``top_k`` refines these."""
        if query.dim != self.dim:
            raise ValueError(f"query dim {query.dim} does not match store dim {self.dim}")
        qnorm = np.linalg.norm(query.values)
        if qnorm == 0.0:
            raise ValueError("cosine similarity is undefined for a zero vector")
        n = len(self._ids)
        return self._unit[:n] @ (query.values / qnorm)

    def top_k(self, query: Embedding, k: int) -> list[Neighbor]:
        if k < 1:
            raise ValueError("k must be >= 1")
        if not self._ids:
            if query.dim != self.dim:
                raise ValueError(f"query dim {query.dim} does not match store dim {self.dim}")
            return []
        approx = self.scores(query)
        if k < len(approx):
            kth = np.partition(approx, len(approx) - k)[len(approx) - k]
            shortlist = np.flatnonzero(approx >= kth - _SHORTLIST_MARGIN)
        else:
            shortlist = np.arange(len(approx))
        exact = [(cosine_similarity(query, self._raw[i]), int(i)) for i in shortlist]
        exact.sort(key=lambda t: (-t[0], t[1]))
        return [Neighbor(self._ids[i], s) for s, i in exact[:k]]

    # -- snapshots ----------------------------------------------------------

    def to_snapshot(self) -> dict:
        return {
            "dim": self.dim,
            "entries": [
                {"entry_id": eid, "values": e.tolist()} for eid, e in zip(self._ids, self._raw)
            ],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_snapshot()), encoding="utf-8")

    @classmethod
    def from_snapshot(cls, snap: dict) -> VectorStore:
        store = cls(int(snap["dim"]))
        for entry in snap["entries"]:
            store.insert(entry["entry_id"], Embedding(entry["values"]))
        return store

    @classmethod
    def load(cls, path: str | Path) -> VectorStore:
        return cls.from_snapshot(json.loads(Path(path).read_text(encoding="utf-8")))
