"""Three-stage test-set generation.

1. Answer/question synthesis: the LLM lists facts in a document, then
   writes one question per fact.
2. Verification: a question is kept only if retrieving the top-N corpus
   documents for it returns its source document.
3. Variation generation: the LLM paraphrases each verified question; the
   paraphrases are filtered for duplicates, near-duplicates and relevance.

LLM-level failures degrade to recorded skips. Embedding failures are fatal.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import string
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Sequence

from .cache import rescaled_cosine
from .dataset import CreatedBy, Document, QAPair, VariationGroup, normalize_question
from .embedding import Embedder, Embedding
from .errors import (
    ContractViolation,
    EmbeddingError,
    ParseError,
    PipelineError,
    ProviderError,
    TemplateError,
    ValidationError,
)
from .llm import ChatRequest, LlmProvider, UsageLedger, ask_json_list
from .vector_store import VectorStore

log = logging.getLogger(__name__)

VARIATION_CONSTRAINT = (
    "Generate variations ONLY from the provided Question above and ONLY use the "
    "Answer to constrain the generated questions."
)
SYSTEM_PROMPT = (
    "You help build test data for a question answering system. "
    "Follow the instructions exactly and answer with JSON only."
)

_LLM_FAILURES = (ProviderError, ContractViolation, ParseError)

_PLACEHOLDERS = {
    "extract_facts": {"document_text"},
    "generate_question": {"answer", "document_text", "domain_terms"},
    "generate_variations": {"question", "answer", "guidelines"},
    "guidelines": {"count"},
}


def _fields(template: str) -> set[str]:
    try:
        return {name for _, name, _, _ in string.Formatter().parse(template) if name is not None}
    except ValueError as exc:
        raise TemplateError(f"malformed template: {exc}") from None


def _default_template(name: str) -> str:
    return resources.files(__package__).joinpath(f"templates/{name}.txt").read_text(encoding="utf-8")


@dataclass(frozen=True)
class PromptTemplates:
    extract_facts: str = field(default_factory=lambda: _default_template("extract_facts"))
    generate_question: str = field(default_factory=lambda: _default_template("generate_question"))
    generate_variations: str = field(default_factory=lambda: _default_template("generate_variations"))
    guidelines: str = field(default_factory=lambda: _default_template("guidelines"))

    def __post_init__(self) -> None:
        for name, allowed in _PLACEHOLDERS.items():
            unknown = _fields(getattr(self, name)) - allowed
            if unknown:
                raise TemplateError(f"template {name!r} uses unknown placeholders: {sorted(unknown)}")
        if VARIATION_CONSTRAINT not in self.generate_variations:
            raise TemplateError("variation template must contain the ONLY-Question/ONLY-Answer constraint")

    @classmethod
    def load(cls, directory: str | Path | None = None, guidelines: str | Path | None = None) -> PromptTemplates:
        """Defaults, overridden by any ``<name>.txt`` found in ``directory``
        and by an explicit guidelines file."""
        kwargs = {}
        if directory is not None:
            for name in _PLACEHOLDERS:
                p = Path(directory) / f"{name}.txt"
                if p.exists():
                    kwargs[name] = p.read_text(encoding="utf-8")
        if guidelines is not None:
            kwargs["guidelines"] = Path(guidelines).read_text(encoding="utf-8")
        return cls(**kwargs)


@dataclass(frozen=True)
class PipelineConfig:
    top_n_verification: int = 3
    variations_per_question: int = 10
    dedupe_similarity_ceiling: float = 0.98  # rescaled-cosine scale
    domain_terms: tuple[str, ...] | None = None
    seed: int = 0
    max_document_chars: int = 24_000
    parallelism: int = 4
    max_retries: int = 3
    model_name: str = "default"
    max_tokens: int = 1024
    extract_temperature: float = 0.0
    question_temperature: float = 0.0
    variation_temperature: float = 0.8

    def __post_init__(self) -> None:
        if self.top_n_verification < 1:
            raise ValueError("top_n_verification must be >= 1")
        if self.variations_per_question < 1:
            raise ValueError("variations_per_question must be >= 1")
        if not 0.0 <= self.dedupe_similarity_ceiling <= 1.0:
            raise ValueError("dedupe_similarity_ceiling must be in [0, 1]")
        if self.max_document_chars < 1 or self.parallelism < 1:
            raise ValueError("max_document_chars and parallelism must be positive")
        if self.domain_terms is not None and not isinstance(self.domain_terms, tuple):
            object.__setattr__(self, "domain_terms", tuple(self.domain_terms))


COUNT_KEYS = (
    "documents",
    "answers_extracted",
    "questions_generated",
    "verification_kept",
    "verification_dropped",
    "variations_requested",
    "variations_returned",
    "variations_survived",
    "groups",
)


@dataclass
class RunManifest:
    seed: int
    config: dict[str, Any]
    per_stage_counts: dict[str, int] = field(default_factory=dict)
    skipped: list[dict[str, str]] = field(default_factory=list)
    stages: list[str] = field(default_factory=list)
    llm_usage: dict[str, int] = field(default_factory=dict)

    def count(self, key: str, n: int = 1) -> None:
        self.per_stage_counts[key] = self.per_stage_counts.get(key, 0) + n

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "config": self.config,
            "per_stage_counts": dict(self.per_stage_counts),
            "skipped": list(self.skipped),
            "stages": list(self.stages),
            "llm_usage": dict(self.llm_usage),
        }

    def write(self, path: str | Path, merge: bool = True) -> None:
        """Write as JSON. With ``merge``, counts and skips from other stages
        already recorded at ``path`` are kept, so the separate CLI steps build
        up one manifest for the whole run."""
        path = Path(path)
        out = self.to_dict()
        if merge and path.exists():
            try:
                old = json.loads(path.read_text(encoding="utf-8"))
            except ValueError:
                old = {}
            counts = dict(old.get("per_stage_counts", {}))
            counts.update(out["per_stage_counts"])
            out["per_stage_counts"] = counts
            out["skipped"] = [
                s for s in old.get("skipped", []) if s.get("stage") not in self.stages
            ] + out["skipped"]
            out["stages"] = [s for s in old.get("stages", []) if s not in self.stages] + out["stages"]
        path.write_text(json.dumps(out, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _skip(skips: list[dict[str, str]], stage: str, ident: str, reason: str) -> None:
    log.warning("%s: skipped %s: %s", stage, ident, reason)
    skips.append({"stage": stage, "id": ident, "reason": reason})


class DocumentIndex:
    """Corpus documents embedded into a ``VectorStore`` keyed by doc_id."""

    def __init__(self, corpus: Sequence[Document], embedder: Embedder):
        self.embedder = embedder
        self.doc_ids = [d.doc_id for d in corpus]
        self.store = VectorStore(embedder.dim)
        if corpus:
            for doc, e in zip(corpus, embedder.embed([d.text for d in corpus])):
                self.store.insert(doc.doc_id, e)

    def retrieve(self, embedding: Embedding, n: int) -> list[str]:
        return [nb.entry_id for nb in self.store.top_k(embedding, n)]


def _embed_one(embedder: Embedder, text: str) -> Embedding | None:
    """None when the text has no usable tokens; provider errors propagate."""
    try:
        return embedder.embed([text])[0]
    except EmbeddingError:
        return None


def verify_queries(
    pairs: Sequence[QAPair],
    corpus: Sequence[Document],
    embedder: Embedder,
    n: int,
    *,
    index: DocumentIndex | None = None,
) -> tuple[list[QAPair], list[QAPair]]:
    """Split ``pairs`` into (kept, dropped) by top-``n`` retrieval grounding.

    A pair is kept, with ``verified=True``, iff its source document is among
    the ``n`` corpus documents most similar to its question.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    known = {d.doc_id for d in corpus}
    for p in pairs:
        if p.source_doc_id not in known:
            raise ValidationError(f"QA pair {p.qa_id!r} references unknown document {p.source_doc_id!r}")
    index = index or DocumentIndex(corpus, embedder)
    kept, dropped = [], []
    for p in pairs:
        e = _embed_one(embedder, p.question)
        if e is not None and p.source_doc_id in index.retrieve(e, n):
            kept.append(dataclasses.replace(p, verified=True))
        else:
            dropped.append(dataclasses.replace(p, verified=False))
    return kept, dropped


def filter_variations(
    original: QAPair,
    candidates: Sequence[str],
    index: DocumentIndex,
    config: PipelineConfig,
    rejected: list[tuple[str, str]] | None = None,
) -> list[str]:
    """Apply, in order: normalized-identity dedupe against the original and
    earlier survivors; near-duplicate removal (rescaled cosine at or above
    ``dedupe_similarity_ceiling``); and the retrieval relevance check. Rejected
    candidates are appended to ``rejected`` as ``(candidate, reason)``."""
    embedder = index.embedder
    rejected = rejected if rejected is not None else []
    seen = {normalize_question(original.question)}
    kept_embeddings: list[Embedding] = []
    orig_e = _embed_one(embedder, original.question)
    if orig_e is not None:
        kept_embeddings.append(orig_e)
    survivors: list[str] = []
    for cand in candidates:
        cand = cand.strip()
        key = normalize_question(cand)
        if not key or key in seen:
            rejected.append((cand, "duplicate"))
            continue
        e = _embed_one(embedder, cand)
        if e is None:
            rejected.append((cand, "no_tokens"))
            continue
        if any(rescaled_cosine(e, other) >= config.dedupe_similarity_ceiling for other in kept_embeddings):
            rejected.append((cand, "near_duplicate"))
            continue
        if original.source_doc_id not in index.retrieve(e, config.top_n_verification):
            rejected.append((cand, "irrelevant"))
            continue
        seen.add(key)
        kept_embeddings.append(e)
        survivors.append(cand)
    return survivors


class Pipeline:
    """Stage runner holding the provider, embedder, templates and manifest."""

    def __init__(
        self,
        provider: LlmProvider,
        embedder: Embedder,
        config: PipelineConfig | None = None,
        templates: PromptTemplates | None = None,
        *,
        ledger: UsageLedger | None = None,
        sleep: Callable[[float], None] = time.sleep,
        config_echo: dict[str, Any] | None = None,
    ):
        self.provider = provider
        self.embedder = embedder
        self.config = config or PipelineConfig()
        self.templates = templates or PromptTemplates()
        self.ledger = ledger or UsageLedger()
        self._sleep = sleep
        echo = config_echo if config_echo is not None else {"pipeline": _jsonable(dataclasses.asdict(self.config))}
        self.manifest = RunManifest(seed=self.config.seed, config=echo)

    # -- helpers ----------------------------------------------------------

    def _ask(self, task: str, subject: str, prompt: str, temperature: float) -> list[str]:
        req = ChatRequest(
            system_prompt=SYSTEM_PROMPT,
            user_prompt=prompt,
            temperature=temperature,
            max_tokens=self.config.max_tokens,
            model_name=self.config.model_name,
            task=task,
            subject=subject,
        )
        return ask_json_list(
            self.provider, req, max_retries=self.config.max_retries, ledger=self.ledger, sleep=self._sleep
        )

    def _domain_terms(self, doc: Document) -> str:
        terms = list(doc.domain_terms or ()) + [
            t for t in (self.config.domain_terms or ()) if t not in (doc.domain_terms or ())
        ]
        return ", ".join(terms) if terms else "(none)"

    def check_documents(self, corpus: Sequence[Document]) -> None:
        for doc in corpus:
            if len(doc.text) > self.config.max_document_chars:
                raise PipelineError(
                    f"document {doc.doc_id!r} has {len(doc.text)} characters, "
                    f"over the {self.config.max_document_chars}-character budget"
                )

    def _start(self, stage: str) -> None:
        if stage not in self.manifest.stages:
            self.manifest.stages.append(stage)

    def _finish(self) -> None:
        self.manifest.llm_usage = self.ledger.as_dict()

    # -- stage 1 -----------------------------------------------------------

    def extract_answers(self, doc: Document, skips: list | None = None) -> list[str]:
        """Facts stated in ``doc``, deduplicated by normalized text. An LLM
        failure is recorded and yields no answers."""
        skips = skips if skips is not None else self.manifest.skipped
        prompt = self.templates.extract_facts.format(document_text=doc.text)
        try:
            facts = self._ask("extract_facts", doc.doc_id, prompt, self.config.extract_temperature)
        except _LLM_FAILURES as exc:
            _skip(skips, "extract_answers", doc.doc_id, str(exc))
            return []
        seen, answers = set(), []
        for fact in facts:
            key = normalize_question(fact)
            if key and key not in seen:
                seen.add(key)
                answers.append(fact)
        if not answers:
            log.warning("extract_answers: no facts returned for %s", doc.doc_id)
        return answers

    def generate_questions(self, answers: Sequence[str], doc: Document, skips: list | None = None) -> list[QAPair]:
        if not answers:
            raise PipelineError(f"generate_questions needs at least one answer (document {doc.doc_id!r})")
        skips = skips if skips is not None else self.manifest.skipped
        terms = self._domain_terms(doc)
        seen: set[str] = set()
        pairs = []
        for i, answer in enumerate(answers):
            qa_id = f"{doc.doc_id}-a{i}"
            prompt = self.templates.generate_question.format(
                answer=answer, document_text=doc.text, domain_terms=terms
            )
            try:
                questions = self._ask("generate_question", answer, prompt, self.config.question_temperature)
            except _LLM_FAILURES as exc:
                _skip(skips, "generate_questions", qa_id, str(exc))
                continue
            if not questions:
                _skip(skips, "generate_questions", qa_id, "empty response")
                continue
            question = questions[0]
            key = normalize_question(question)
            if not key or key in seen:
                _skip(skips, "generate_questions", qa_id, "duplicate question")
                continue
            seen.add(key)
            pairs.append(
                QAPair(qa_id=qa_id, question=question, answer=answer, source_doc_id=doc.doc_id,
                       verified=False, created_by=CreatedBy.LLM)
            )
        return pairs

    def _synthesize_one(self, doc: Document) -> tuple[int, list[QAPair], list]:
        skips: list = []
        answers = self.extract_answers(doc, skips)
        pairs = self.generate_questions(answers, doc, skips) if answers else []
        return len(answers), pairs, skips

    def generate(self, corpus: Sequence[Document]) -> list[QAPair]:
        """Stage 1 over the whole corpus, merged in corpus order."""
        self.check_documents(corpus)
        self._start("extract_answers")
        self._start("generate_questions")
        with ThreadPoolExecutor(max_workers=self.config.parallelism) as pool:
            results = list(pool.map(self._synthesize_one, corpus))
        out: list[QAPair] = []
        self.manifest.count("documents", len(corpus))
        self.manifest.count("answers_extracted", 0)
        for n_answers, pairs, skips in results:
            self.manifest.count("answers_extracted", n_answers)
            self.manifest.skipped.extend(skips)
            out.extend(pairs)
        self.manifest.count("questions_generated", len(out))
        self._finish()
        return out

    # -- stage 2 -----------------------------------------------------------

    def verify(
        self, pairs: Sequence[QAPair], corpus: Sequence[Document], index: DocumentIndex | None = None
    ) -> tuple[list[QAPair], list[QAPair]]:
        self._start("verify_queries")
        kept, dropped = verify_queries(
            pairs, corpus, self.embedder, self.config.top_n_verification, index=index
        )
        self.manifest.count("verification_kept", len(kept))
        self.manifest.count("verification_dropped", len(dropped))
        for p in dropped:
            _skip(self.manifest.skipped, "verify_queries", p.qa_id,
                  f"source document not in top {self.config.top_n_verification}")
        return kept, dropped

    # -- stage 3 -----------------------------------------------------------

    def generate_variations(self, pair: QAPair, index: DocumentIndex, skips: list | None = None) -> tuple[VariationGroup, int, int]:
        """Group for ``pair`` plus (requested, returned) candidate counts."""
        if not pair.verified:
            raise PipelineError(f"QA pair {pair.qa_id!r} has not passed verification")
        skips = skips if skips is not None else self.manifest.skipped
        n = self.config.variations_per_question
        prompt = self.templates.generate_variations.format(
            question=pair.question,
            answer=pair.answer,
            guidelines=self.templates.guidelines.format(count=n).strip(),
        )
        try:
            candidates = self._ask("generate_variations", pair.question, prompt, self.config.variation_temperature)
        except _LLM_FAILURES as exc:
            _skip(skips, "generate_variations", pair.qa_id, str(exc))
            candidates = []
        candidates = candidates[:n]
        rejected: list[tuple[str, str]] = []
        survivors = filter_variations(pair, candidates, index, self.config, rejected)
        for cand, reason in rejected:
            _skip(skips, "filter_variations", pair.qa_id, f"{reason}: {cand}")
        group = VariationGroup(group_id=pair.qa_id, original=pair, variations=tuple(survivors), answer=pair.answer)
        return group, n, len(candidates)

    def vary(
        self, pairs: Sequence[QAPair], corpus: Sequence[Document], index: DocumentIndex | None = None
    ) -> list[VariationGroup]:
        """Stage 3 for every verified pair; unverified pairs are skipped."""
        self._start("generate_variations")
        self._start("filter_variations")
        index = index or DocumentIndex(corpus, self.embedder)
        todo = []
        for p in pairs:
            if p.verified:
                todo.append(p)
            else:
                _skip(self.manifest.skipped, "generate_variations", p.qa_id, "not verified")

        def work(p: QAPair):
            skips: list = []
            group, requested, returned = self.generate_variations(p, index, skips)
            return group, requested, returned, skips

        with ThreadPoolExecutor(max_workers=self.config.parallelism) as pool:
            results = list(pool.map(work, todo))
        groups = []
        for key in ("variations_requested", "variations_returned", "variations_survived", "groups"):
            self.manifest.count(key, 0)
        for group, requested, returned, skips in results:
            self.manifest.count("variations_requested", requested)
            self.manifest.count("variations_returned", returned)
            self.manifest.count("variations_survived", len(group.variations))
            self.manifest.count("groups")
            self.manifest.skipped.extend(skips)
            groups.append(group)
        self._finish()
        return groups

    # -- all stages --------------------------------------------------------

    def run(self, corpus: Sequence[Document]) -> list[VariationGroup]:
        if not corpus:
            raise PipelineError("corpus is empty")
        self.check_documents(corpus)
        index = DocumentIndex(corpus, self.embedder)
        pairs = self.generate(corpus)
        kept, _ = self.verify(pairs, corpus, index)
        return self.vary(kept, corpus, index)


def run_pipeline(
    corpus: Sequence[Document],
    provider: LlmProvider,
    embedder: Embedder,
    config: PipelineConfig | None = None,
    templates: PromptTemplates | None = None,
) -> tuple[list[VariationGroup], RunManifest]:
    pipe = Pipeline(provider, embedder, config, templates)
    groups = pipe.run(corpus)
    return groups, pipe.manifest


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value
