"""Generate paraphrase test sets with an LLM and replay them against an
embedding-based semantic cache to measure its hit/miss behaviour."""

from pathlib import Path

from .cache import (
    CacheConfig,
    CacheEntry,
    CosineScorer,
    LookupResult,
    RemotePairScorer,
    ScriptedScorer,
    SemanticCache,
    rescaled_cosine,
)
from .dataset import (
    CreatedBy,
    Document,
    EvalRecord,
    Outcome,
    QAPair,
    VariationGroup,
    normalize_question,
    read_corpus,
    read_dataset,
    read_eval,
    read_qa,
    write_corpus,
    write_dataset,
    write_eval,
    write_qa,
)
from .embedding import (
    Embedding,
    EmbeddingProviderConfig,
    HashingEmbedder,
    RemoteEmbedder,
    cosine_similarity,
    make_embedder,
    tokenize,
)
from .evaluation import (
    CalibrationCurve,
    ConfusionReport,
    InsertPolicy,
    OrderPolicy,
    ReplayPlan,
    build_plan,
    replay,
    summarize,
    sweep,
)
from .llm import (
    ChatCompletionsProvider,
    ChatRequest,
    ScriptedProvider,
    UsageLedger,
    complete_with_retry,
    parse_json_list,
)
from .pipeline import (
    DocumentIndex,
    Pipeline,
    PipelineConfig,
    PromptTemplates,
    filter_variations,
    run_pipeline,
    verify_queries,
)
from .vector_store import Neighbor, VectorStore

__version__ = "0.1.0"

__all__ = [
    "CacheConfig",
    "CacheEntry",
    "CalibrationCurve",
    "ChatCompletionsProvider",
    "ChatRequest",
    "ConfusionReport",
    "CosineScorer",
    "CreatedBy",
    "Document",
    "DocumentIndex",
    "Embedding",
    "EmbeddingProviderConfig",
    "EvalRecord",
    "HashingEmbedder",
    "InsertPolicy",
    "LookupResult",
    "Neighbor",
    "OrderPolicy",
    "Outcome",
    "Pipeline",
    "PipelineConfig",
    "PromptTemplates",
    "QAPair",
    "RemoteEmbedder",
    "RemotePairScorer",
    "ReplayPlan",
    "ScriptedProvider",
    "ScriptedScorer",
    "SemanticCache",
    "UsageLedger",
    "VariationGroup",
    "VectorStore",
    "build_plan",
    "complete_with_retry",
    "cosine_similarity",
    "filter_variations",
    "make_embedder",
    "normalize_question",
    "parse_json_list",
    "read_corpus",
    "read_dataset",
    "read_eval",
    "read_qa",
    "replay",
    "rescaled_cosine",
    "run_pipeline",
    "summarize",
    "sweep",
    "tokenize",
    "verify_queries",
    "write_corpus",
    "write_dataset",
    "write_eval",
    "write_qa",
    "fixture_path",
]


def fixture_path(name: str = "") -> Path:
    """Path to the bundled fixture directory, or to one file inside it."""
    base = Path(__file__).parent / "fixtures"
    return base / name if name else base
