"""Data types and JSONL (de)serialization for corpora, Q/A pairs, variation
groups and evaluation records.

All types are frozen dataclasses. Sequences are stored as tuples so values
stay hashable and ``read(write(x)) == x`` holds exactly.
"""

from __future__ import annotations

import json
import re
import warnings
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, TypeVar

from .errors import ValidationError

__all__ = [
    "CreatedBy",
    "Outcome",
    "Document",
    "QAPair",
    "VariationGroup",
    "EvalRecord",
    "DuplicateQuestionWarning",
    "normalize_question",
    "read_corpus",
    "write_corpus",
    "read_qa",
    "write_qa",
    "read_dataset",
    "write_dataset",
    "read_eval",
    "write_eval",
]

_WS = re.compile(r"\s+")
_TERMINAL = re.compile(r"[\s?.!]+$")


class DuplicateQuestionWarning(UserWarning):
    """The same normalized question appears in more than one group."""


class CreatedBy(str, Enum):
    LLM = "llm"
    HUMAN = "human"
    FIXTURE = "fixture"


class Outcome(str, Enum):
    CORRECT_HIT = "correct_hit"
    INCORRECT_HIT = "incorrect_hit"
    CORRECT_MISS = "correct_miss"
    INCORRECT_MISS = "incorrect_miss"

    @property
    def is_hit(self) -> bool:
        return self in (Outcome.CORRECT_HIT, Outcome.INCORRECT_HIT)


def normalize_question(q: str) -> str:
    """Canonical form used for byte-identity dedupe.

    Lowercases, collapses whitespace runs, trims, and drops the trailing run
    of ``?``, ``.`` and ``!``. The result is a fixed point:
    ``normalize_question(normalize_question(q)) == normalize_question(q)``.

    >>> normalize_question("  What is  AT1? ")
    'what is at1'
    """
    q = _WS.sub(" ", q.lower()).strip()
    return _TERMINAL.sub("", q)


def _require_str(d: dict, key: str, where: str) -> str:
    value = d.get(key)
    if not isinstance(value, str):
        raise ValidationError(f"{where}: field {key!r} must be a string")
    return value


def _optional_str(d: dict, key: str, where: str) -> str | None:
    value = d.get(key)
    if value is not None and not isinstance(value, str):
        raise ValidationError(f"{where}: field {key!r} must be a string or null")
    return value


def _str_tuple(d: dict, key: str, where: str) -> tuple[str, ...]:
    value = d.get(key)
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ValidationError(f"{where}: field {key!r} must be a list of strings")
    return tuple(value)


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    title: str | None = None
    domain_terms: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ValidationError("document doc_id must be non-empty")
        if not self.text.strip():
            raise ValidationError(f"document {self.doc_id!r} has empty text")
        if self.domain_terms is not None and not isinstance(self.domain_terms, tuple):
            object.__setattr__(self, "domain_terms", tuple(self.domain_terms))

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"doc_id": self.doc_id, "text": self.text}
        if self.title is not None:
            out["title"] = self.title
        if self.domain_terms is not None:
            out["domain_terms"] = list(self.domain_terms)
        return out

    @classmethod
    def from_dict(cls, d: dict, where: str = "document") -> Document:
        terms = _str_tuple(d, "domain_terms", where) if d.get("domain_terms") is not None else None
        return cls(
            doc_id=_require_str(d, "doc_id", where),
            text=_require_str(d, "text", where),
            title=_optional_str(d, "title", where),
            domain_terms=terms,
        )


@dataclass(frozen=True)
class QAPair:
    qa_id: str
    question: str
    answer: str
    source_doc_id: str
    verified: bool = False
    created_by: CreatedBy = CreatedBy.LLM

    def __post_init__(self) -> None:
        if not self.qa_id:
            raise ValidationError("qa_id must be non-empty")
        if not self.question.strip() or not self.answer.strip():
            raise ValidationError(f"QA pair {self.qa_id!r} needs a non-empty question and answer")
        if not isinstance(self.created_by, CreatedBy):
            try:
                object.__setattr__(self, "created_by", CreatedBy(self.created_by))
            except ValueError:
                raise ValidationError(f"QA pair {self.qa_id!r}: bad created_by {self.created_by!r}") from None

    def to_dict(self) -> dict[str, Any]:
        return {
            "qa_id": self.qa_id,
            "question": self.question,
            "answer": self.answer,
            "source_doc_id": self.source_doc_id,
            "verified": self.verified,
            "created_by": self.created_by.value,
        }

    @classmethod
    def from_dict(cls, d: dict, where: str = "qa pair") -> QAPair:
        verified = d.get("verified", False)
        if not isinstance(verified, bool):
            raise ValidationError(f"{where}: field 'verified' must be a boolean")
        return cls(
            qa_id=_require_str(d, "qa_id", where),
            question=_require_str(d, "question", where),
            answer=_require_str(d, "answer", where),
            source_doc_id=_require_str(d, "source_doc_id", where),
            verified=verified,
            created_by=d.get("created_by", "llm"),
        )


@dataclass(frozen=True)
class VariationGroup:
    """An original Q/A pair plus paraphrases that share its answer.

    Membership is the ground truth for cache evaluation: two queries are
    "the same" exactly when they belong to the same group.
    """

    group_id: str
    original: QAPair
    variations: tuple[str, ...] = ()
    answer: str = ""

    def __post_init__(self) -> None:
        if not isinstance(self.variations, tuple):
            object.__setattr__(self, "variations", tuple(self.variations))
        if not self.answer:
            object.__setattr__(self, "answer", self.original.answer)
        if not self.group_id:
            raise ValidationError("group_id must be non-empty")
        seen: set[str] = set()
        for q in self.members:
            key = normalize_question(q)
            if key in seen:
                raise ValidationError(
                    f"group {self.group_id!r}: duplicate member after normalization: {q!r}"
                )
            seen.add(key)

    @property
    def members(self) -> tuple[str, ...]:
        """Original question followed by the variations."""
        return (self.original.question, *self.variations)

    def to_dict(self) -> dict[str, Any]:
        return {
            "group_id": self.group_id,
            "original": self.original.to_dict(),
            "variations": list(self.variations),
            "answer": self.answer,
        }

    @classmethod
    def from_dict(cls, d: dict, where: str = "group") -> VariationGroup:
        original = d.get("original")
        if not isinstance(original, dict):
            raise ValidationError(f"{where}: field 'original' must be an object")
        return cls(
            group_id=_require_str(d, "group_id", where),
            original=QAPair.from_dict(original, where),
            variations=_str_tuple(d, "variations", where),
            answer=_require_str(d, "answer", where),
        )


@dataclass(frozen=True)
class EvalRecord:
    query: str
    group_id: str
    outcome: Outcome
    sequence_index: int
    matched_group_id: str | None = None
    similarity_score: float | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.outcome, Outcome):
            object.__setattr__(self, "outcome", Outcome(self.outcome))
        if self.sequence_index < 0:
            raise ValidationError("sequence_index must be non-negative")
        if self.outcome is Outcome.CORRECT_HIT and self.matched_group_id != self.group_id:
            raise ValidationError("correct_hit requires matched_group_id == group_id")
        if self.outcome is Outcome.INCORRECT_HIT and (
            self.matched_group_id is None or self.matched_group_id == self.group_id
        ):
            raise ValidationError("incorrect_hit requires a different matched_group_id")
        if not self.outcome.is_hit and self.matched_group_id is not None:
            raise ValidationError("misses must not carry matched_group_id")
        if self.similarity_score is not None and not -1.0 <= self.similarity_score <= 1.0:
            raise ValidationError(f"similarity_score out of range: {self.similarity_score}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "query": self.query,
            "group_id": self.group_id,
            "outcome": self.outcome.value,
            "matched_group_id": self.matched_group_id,
            "similarity_score": self.similarity_score,
            "sequence_index": self.sequence_index,
        }

    @classmethod
    def from_dict(cls, d: dict, where: str = "eval record") -> EvalRecord:
        try:
            return cls(
                query=_require_str(d, "query", where),
                group_id=_require_str(d, "group_id", where),
                outcome=Outcome(d["outcome"]),
                sequence_index=int(d["sequence_index"]),
                matched_group_id=_optional_str(d, "matched_group_id", where),
                similarity_score=d.get("similarity_score"),
            )
        except (KeyError, ValueError, TypeError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"{where}: {exc}") from None


# -- JSONL plumbing ---------------------------------------------------------

T = TypeVar("T")


def _iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: line {lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ValidationError(f"{path}: line {lineno}: expected a JSON object")
            yield lineno, obj


def _read(path: str | Path, parse: Callable[[dict, str], T]) -> list[T]:
    out = []
    for lineno, obj in _iter_jsonl(path):
        where = f"{path}: line {lineno}"
        try:
            out.append(parse(obj, where))
        except ValidationError as exc:
            msg = str(exc)
            raise ValidationError(msg if msg.startswith(where) else f"{where}: {msg}") from None
    return out


def _write(items: Iterable[Any], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for item in items:
            fh.write(json.dumps(item.to_dict(), ensure_ascii=False))
            fh.write("\n")


def _check_unique(ids: Iterable[str], kind: str, path: str | Path) -> None:
    dupes = [k for k, n in Counter(ids).items() if n > 1]
    if dupes:
        raise ValidationError(f"{path}: duplicate {kind} {dupes[0]!r}")


def read_corpus(path: str | Path) -> list[Document]:
    docs = _read(path, Document.from_dict)
    _check_unique((d.doc_id for d in docs), "doc_id", path)
    return docs


def write_corpus(docs: Iterable[Document], path: str | Path) -> None:
    docs = list(docs)
    _check_unique((d.doc_id for d in docs), "doc_id", path)
    _write(docs, path)


def read_qa(path: str | Path) -> list[QAPair]:
    pairs = _read(path, QAPair.from_dict)
    _check_unique((p.qa_id for p in pairs), "qa_id", path)
    return pairs


def write_qa(pairs: Iterable[QAPair], path: str | Path) -> None:
    pairs = list(pairs)
    _check_unique((p.qa_id for p in pairs), "qa_id", path)
    _write(pairs, path)


def check_groups(groups: list[VariationGroup], where: str = "dataset") -> None:
    """Dataset-level validation: unique group ids (error) and questions shared
    between groups (``DuplicateQuestionWarning``)."""
    _check_unique((g.group_id for g in groups), "group_id", where)
    owners: dict[str, str] = {}
    for g in groups:
        for q in g.members:
            key = normalize_question(q)
            other = owners.setdefault(key, g.group_id)
            if other != g.group_id:
                warnings.warn(
                    f"{where}: question {q!r} appears in groups {other!r} and {g.group_id!r}",
                    DuplicateQuestionWarning,
                    stacklevel=3,
                )


def read_dataset(path: str | Path) -> list[VariationGroup]:
    groups = _read(path, VariationGroup.from_dict)
    check_groups(groups, str(path))
    return groups


def write_dataset(groups: Iterable[VariationGroup], path: str | Path) -> None:
    groups = list(groups)
    check_groups(groups, str(path))
    _write(groups, path)


def read_eval(path: str | Path) -> list[EvalRecord]:
    return _read(path, EvalRecord.from_dict)


def write_eval(records: Iterable[EvalRecord], path: str | Path) -> None:
    _write(records, path)
