"""Replay a variation-group dataset through a semantic cache and classify
every lookup as a correct/incorrect hit or miss.

Ground truth is group membership: a hit is correct when the returned entry
came from the query's own group; a miss is incorrect when some entry of the
query's group is in the cache at that moment.
"""

from __future__ import annotations

import csv
import io
import json
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Sequence

from .cache import CacheConfig, SemanticCache, SimilarityScorer
from .dataset import EvalRecord, Outcome, VariationGroup
from .embedding import Embedder, Embedding
from .errors import ReplayError, SemcacheError

SWEEP_HEADER = (
    "threshold",
    "correct_hits",
    "incorrect_hits",
    "correct_misses",
    "incorrect_misses",
    "precision",
    "recall",
    "f1",
)
NA = "n/a"


class OrderPolicy(str, Enum):
    AS_GIVEN = "as_given"
    SEEDED_SHUFFLE = "seeded_shuffle"


class InsertPolicy(str, Enum):
    MISS = "miss"  # insert only when the lookup misses
    ALWAYS = "always"


@dataclass(frozen=True)
class PlannedQuery:
    query_text: str
    group_id: str
    answer: str
    is_original: bool


@dataclass(frozen=True)
class ReplayPlan:
    queries: tuple[PlannedQuery, ...]
    order_policy: OrderPolicy
    seed: int

    def __len__(self) -> int:
        return len(self.queries)


def build_plan(
    groups: Sequence[VariationGroup],
    order_policy: OrderPolicy | str = OrderPolicy.SEEDED_SHUFFLE,
    seed: int = 0,
) -> ReplayPlan:
    """Flatten every original and variation into one query stream.

    ``as_given`` keeps file order, each group contiguous with its original
    first; ``seeded_shuffle`` permutes that stream with ``random.Random(seed)``.
    """
    order_policy = OrderPolicy(order_policy)
    queries = [
        PlannedQuery(q, g.group_id, g.answer, i == 0)
        for g in groups
        for i, q in enumerate(g.members)
    ]
    if order_policy is OrderPolicy.SEEDED_SHUFFLE:
        random.Random(seed).shuffle(queries)
    return ReplayPlan(tuple(queries), order_policy, seed)


_COUNTER = {
    Outcome.CORRECT_HIT: "correct_hits",
    Outcome.INCORRECT_HIT: "incorrect_hits",
    Outcome.CORRECT_MISS: "correct_misses",
    Outcome.INCORRECT_MISS: "incorrect_misses",
}


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def _f1(p: float | None, r: float | None) -> float | None:
    if p is None or r is None or p + r == 0:
        return None
    return 2 * p * r / (p + r)


@dataclass
class ConfusionReport:
    correct_hits: int = 0
    incorrect_hits: int = 0
    correct_misses: int = 0
    incorrect_misses: int = 0
    threshold: float = 0.0
    scorer_name: str = ""
    records: list[EvalRecord] = field(default_factory=list)
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.correct_hits + self.incorrect_hits + self.correct_misses + self.incorrect_misses

    @property
    def hits(self) -> int:
        return self.correct_hits + self.incorrect_hits

    @property
    def precision(self) -> float | None:
        return _ratio(self.correct_hits, self.correct_hits + self.incorrect_hits)

    @property
    def recall(self) -> float | None:
        return _ratio(self.correct_hits, self.correct_hits + self.incorrect_misses)

    @property
    def f1(self) -> float | None:
        return _f1(self.precision, self.recall)

    def add(self, record: EvalRecord) -> None:
        attr = _COUNTER[record.outcome]
        setattr(self, attr, getattr(self, attr) + 1)
        self.records.append(record)

    def check(self) -> None:
        if self.total != len(self.records):
            raise SemcacheError(f"counters sum to {self.total} but there are {len(self.records)} records")

    def counters(self) -> dict[str, int]:
        return {
            "correct_hits": self.correct_hits,
            "incorrect_hits": self.incorrect_hits,
            "correct_misses": self.correct_misses,
            "incorrect_misses": self.incorrect_misses,
        }

    def to_dict(self, include_records: bool = True) -> dict[str, Any]:
        out: dict[str, Any] = {
            "threshold": self.threshold,
            "scorer_name": self.scorer_name,
            **self.counters(),
            "total": self.total,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "config": self.config,
        }
        if include_records:
            out["records"] = [r.to_dict() for r in self.records]
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ConfusionReport:
        report = cls(
            correct_hits=int(d["correct_hits"]),
            incorrect_hits=int(d["incorrect_hits"]),
            correct_misses=int(d["correct_misses"]),
            incorrect_misses=int(d["incorrect_misses"]),
            threshold=float(d["threshold"]),
            scorer_name=str(d["scorer_name"]),
            records=[EvalRecord.from_dict(r) for r in d.get("records", [])],
            config=dict(d.get("config", {})),
        )
        if "total" in d and int(d["total"]) != report.total:
            raise SemcacheError(f"report total {d['total']} does not match its counters ({report.total})")
        return report


class _MemoEmbedder:
    """Caches embeddings by text so sweeps embed each query once."""

    def __init__(self, inner: Embedder):
        self.inner = inner
        self.dim = inner.dim
        self._memo: dict[str, Embedding] = {}

    @property
    def fingerprint(self) -> str:
        return self.inner.fingerprint

    def embed(self, texts: Sequence[str]) -> list[Embedding]:
        missing = [t for t in dict.fromkeys(texts) if t not in self._memo]
        if missing:
            self._memo.update(zip(missing, self.inner.embed(missing)))
        return [self._memo[t] for t in texts]


def replay(
    plan: ReplayPlan,
    cache: SemanticCache,
    insert_policy: InsertPolicy | str = InsertPolicy.MISS,
) -> ConfusionReport:
    """Run the plan through ``cache`` one query at a time.

    Per query: look it up, classify against the cache contents at that
    moment, then insert it (on a miss, or always under ``always``). Any
    provider failure aborts with ``ReplayError`` carrying the records made so
    far, which are not counted.
    """
    insert_policy = InsertPolicy(insert_policy)
    if cache.size() != 0:
        raise ValueError("replay needs an empty cache")
    report = ConfusionReport(threshold=cache.config.threshold, scorer_name=cache.config.scorer.name)
    for seq, q in enumerate(plan.queries):
        try:
            qe = cache.embedder.embed([q.query_text])[0]
            result = cache.lookup_embedding(q.query_text, qe)
        except SemcacheError as exc:
            raise ReplayError(f"replay aborted at query {seq}: {exc}", list(report.records)) from exc
        present = any(e.group_id == q.group_id for e in cache.entries())
        if result.hit:
            matched = result.entry.group_id
            outcome = Outcome.CORRECT_HIT if matched == q.group_id else Outcome.INCORRECT_HIT
            record = EvalRecord(q.query_text, q.group_id, outcome, seq, matched, result.score)
        else:
            outcome = Outcome.INCORRECT_MISS if present else Outcome.CORRECT_MISS
            record = EvalRecord(q.query_text, q.group_id, outcome, seq, None, result.best_score)
        report.add(record)
        if not result.hit or insert_policy is InsertPolicy.ALWAYS:
            cache.insert_embedding(q.query_text, qe, q.answer, q.group_id)
    report.config = {
        "threshold": cache.config.threshold,
        "scorer_name": cache.config.scorer.name,
        "top_k_candidates": cache.config.top_k_candidates,
        "capacity": cache.config.capacity,
        "order_policy": plan.order_policy.value,
        "seed": plan.seed,
        "insert_policy": insert_policy.value,
        "embedder": cache.embedder.fingerprint,
    }
    report.check()
    return report


@dataclass(frozen=True)
class CalibrationPoint:
    threshold: float
    correct_hits: int
    incorrect_hits: int
    correct_misses: int
    incorrect_misses: int
    precision: float | None
    recall: float | None
    f1: float | None

    @property
    def hits(self) -> int:
        return self.correct_hits + self.incorrect_hits


@dataclass
class CalibrationCurve:
    points: list[CalibrationPoint]
    reports: list[ConfusionReport] = field(default_factory=list, repr=False)

    def best(self) -> CalibrationPoint | None:
        """Point with the highest defined F1 (lowest threshold on ties)."""
        best = None
        for p in self.points:
            if p.f1 is not None and (best is None or p.f1 > best.f1):
                best = p
        return best


def sweep(
    plan: ReplayPlan,
    thresholds: Iterable[float],
    embedder: Embedder,
    scorer: SimilarityScorer,
    *,
    top_k_candidates: int = 5,
    capacity: int | None = None,
    insert_policy: InsertPolicy | str = InsertPolicy.MISS,
    cache_factory: Callable[[Embedder, CacheConfig], SemanticCache] = SemanticCache,
) -> CalibrationCurve:
    """Replay the same plan once per threshold, each from a fresh cache."""
    thresholds = [float(t) for t in thresholds]
    if not thresholds:
        raise ValueError("sweep needs at least one threshold")
    for a, b in zip(thresholds, thresholds[1:]):
        if not a < b:
            raise ValueError("thresholds must be strictly increasing")
    memo = _MemoEmbedder(embedder)
    points, reports = [], []
    for t in thresholds:
        config = CacheConfig(threshold=t, top_k_candidates=top_k_candidates, capacity=capacity, scorer=scorer)
        report = replay(plan, cache_factory(memo, config), insert_policy)
        reports.append(report)
        points.append(
            CalibrationPoint(t, report.correct_hits, report.incorrect_hits, report.correct_misses,
                             report.incorrect_misses, report.precision, report.recall, report.f1)
        )
    return CalibrationCurve(points, reports)


def _fmt(x: float | None, digits: int = 4) -> str:
    return NA if x is None else f"{x:.{digits}f}"


def sweep_csv(curve: CalibrationCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for p in curve.points:
        w.writerow([repr(p.threshold), p.correct_hits, p.incorrect_hits, p.correct_misses,
                    p.incorrect_misses, _fmt(p.precision, 6), _fmt(p.recall, 6), _fmt(p.f1, 6)])
    return buf.getvalue()


REPORT_COLUMNS = ("Strategy", "Correct Hits", "Incorrect Hits", "Correct Misses", "Incorrect Misses",
                  "Precision", "Recall", "F1")


def summarize(report: ConfusionReport, format: str = "markdown") -> str:
    """Render a report as ``json`` (lossless), ``csv`` or ``markdown``."""
    if format == "json":
        return json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n"
    row = [report.scorer_name or "-", report.correct_hits, report.incorrect_hits,
           report.correct_misses, report.incorrect_misses,
           _fmt(report.precision), _fmt(report.recall), _fmt(report.f1)]
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strategy", "threshold", "correct_hits", "incorrect_hits", "correct_misses",
                    "incorrect_misses", "total", "precision", "recall", "f1"])
        w.writerow([row[0], repr(report.threshold), *row[1:5], report.total, *row[5:]])
        return buf.getvalue()
    if format == "markdown":
        lines = [
            "| " + " | ".join(REPORT_COLUMNS) + " |",
            "|" + "|".join("---" for _ in REPORT_COLUMNS) + "|",
            "| " + " | ".join(str(c) for c in row) + " |",
        ]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {format!r} (expected json, csv or markdown)")
