"""Command line interface.

    semcache-testgen generate  CORPUS --out qa.jsonl
    semcache-testgen verify    QA CORPUS --out verified.jsonl
    semcache-testgen vary      QA CORPUS --out groups.jsonl
    semcache-testgen evaluate  GROUPS --out results/
    semcache-testgen calibrate GROUPS --thresholds 0.5:1.0:0.05 --out sweep.csv
    semcache-testgen report    results/report.json --format markdown

Data goes to files; stdout carries human-readable summaries and stderr the
diagnostics. Exit status: 0 on success, 2 for usage/input errors, 1 for
operational failures (provider errors, aborted replays).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import config as cfgmod
from .cache import CacheConfig, CosineScorer, RemotePairScorer, ScriptedScorer, SemanticCache
from .dataset import (
    read_corpus,
    read_dataset,
    read_qa,
    write_dataset,
    write_eval,
    write_qa,
)
from .embedding import EmbeddingProviderConfig, make_embedder
from .errors import (
    ContractViolation,
    EmbeddingError,
    PipelineError,
    ProviderError,
    ReplayError,
    ScriptMissError,
    TemplateError,
    ValidationError,
)
from .evaluation import (
    ConfusionReport,
    build_plan,
    replay,
    summarize,
    sweep,
    sweep_csv,
)
from .llm import ChatCompletionsProvider, ScriptedProvider
from .pipeline import Pipeline, PipelineConfig, PromptTemplates

log = logging.getLogger("semcache_testgen")


class UsageError(Exception):
    pass


# -- argument parsing -------------------------------------------------------


def _unit_interval(s: str) -> float:
    v = float(s)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{s} is outside [0, 1]")
    return v


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"{s} must be a positive integer")
    return v


def parse_thresholds(spec: str) -> list[float]:
    """``lo:hi:step`` (inclusive of hi) or a comma-separated list."""
    try:
        if ":" in spec:
            lo, hi, step = (float(x) for x in spec.split(":"))
            if step <= 0:
                raise argparse.ArgumentTypeError("step must be positive")
            if lo > hi:
                raise argparse.ArgumentTypeError(f"lo ({lo}) is greater than hi ({hi})")
            n = int((hi - lo) / step + 1e-9)
            values = [round(lo + i * step, 10) for i in range(n + 1)]
        else:
            values = [float(x) for x in spec.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse thresholds {spec!r}") from None
    if not values or any(not 0.0 <= v <= 1.0 for v in values):
        raise argparse.ArgumentTypeError("thresholds must lie in [0, 1]")
    if any(a >= b for a, b in zip(values, values[1:])):
        raise argparse.ArgumentTypeError("thresholds must be strictly increasing")
    return values


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML config file")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_llm(p: argparse.ArgumentParser) -> None:
    p.add_argument("--provider", dest="llm.provider", choices=["remote", "scripted"])
    p.add_argument("--script", dest="llm.script", help="response table for --provider scripted")
    p.add_argument("--llm-url", dest="llm.endpoint_url")
    p.add_argument("--model", dest="llm.model_name")
    p.add_argument("--max-retries", dest="llm.max_retries", type=int)


def _add_embedding(p: argparse.ArgumentParser) -> None:
    p.add_argument("--embedder", dest="embedding.kind", choices=["deterministic_local", "remote"])
    p.add_argument("--embed-url", dest="embedding.endpoint_url")
    p.add_argument("--embed-model", dest="embedding.model_name")
    p.add_argument("--dim", dest="embedding.dim", type=_positive_int)


def _add_manifest(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", type=Path, help="run manifest path (default: run_manifest.json next to --out)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semcache-testgen", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="extract answers and generate questions")
    p.add_argument("corpus", type=Path)
    p.add_argument("--out", type=Path, default=Path("qa.jsonl"))
    p.add_argument("--domain-terms", dest="pipeline.domain_terms", type=cfgmod._terms)
    p.add_argument("--max-document-chars", dest="pipeline.max_document_chars", type=_positive_int)
    p.add_argument("--templates", dest="pipeline.templates", help="directory overriding prompt templates")
    _add_llm(p), _add_manifest(p), _add_common(p)

    p = sub.add_parser("verify", help="keep questions that retrieve their source document")
    p.add_argument("qa", type=Path)
    p.add_argument("corpus", type=Path)
    p.add_argument("--top-n", dest="pipeline.top_n_verification", type=_positive_int)
    p.add_argument("--out", type=Path, default=Path("verified.jsonl"))
    p.add_argument("--dropped", type=Path, help="default: dropped.jsonl next to --out")
    _add_embedding(p), _add_manifest(p), _add_common(p)

    p = sub.add_parser("vary", help="generate and filter question variations")
    p.add_argument("qa", type=Path)
    p.add_argument("corpus", type=Path)
    p.add_argument("--per-question", dest="pipeline.variations_per_question", type=_positive_int)
    p.add_argument("--guidelines", dest="pipeline.guidelines", help="variation guidelines template file")
    p.add_argument("--templates", dest="pipeline.templates", help="directory overriding prompt templates")
    p.add_argument("--top-n", dest="pipeline.top_n_verification", type=_positive_int)
    p.add_argument("--dedupe-ceiling", dest="pipeline.dedupe_similarity_ceiling", type=_unit_interval)
    p.add_argument("--out", type=Path, default=Path("groups.jsonl"))
    _add_llm(p), _add_embedding(p), _add_manifest(p), _add_common(p)

    def add_cache(p: argparse.ArgumentParser) -> None:
        p.add_argument("--scorer", dest="cache.scorer", choices=["cosine", "remote_pair", "scripted"])
        p.add_argument("--scorer-url", dest="cache.scorer_url")
        p.add_argument("--scorer-script", dest="cache.scorer_script")
        p.add_argument("--top-k", dest="cache.top_k_candidates", type=_positive_int)
        p.add_argument("--capacity", dest="cache.capacity", type=_positive_int)
        p.add_argument("--order", dest="evaluation.order", choices=["as_given", "seeded_shuffle"])
        p.add_argument("--seed", dest="evaluation.seed", type=int)
        p.add_argument("--insert-policy", dest="evaluation.insert_policy", choices=["miss", "always"])

    p = sub.add_parser("evaluate", help="replay a dataset through the semantic cache")
    p.add_argument("groups", type=Path)
    p.add_argument("--threshold", dest="cache.threshold", type=_unit_interval)
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    add_cache(p), _add_embedding(p), _add_common(p)

    p = sub.add_parser("calibrate", help="sweep thresholds and write sweep.csv")
    p.add_argument("groups", type=Path)
    p.add_argument("--thresholds", type=parse_thresholds, default=parse_thresholds("0.5:1.0:0.05"))
    p.add_argument("--out", type=Path, default=Path("sweep.csv"))
    add_cache(p), _add_embedding(p), _add_common(p)

    p = sub.add_parser("report", help="render a report.json")
    p.add_argument("report", type=Path)
    p.add_argument("--format", choices=["json", "csv", "markdown"], default="markdown")
    p.add_argument("--out", type=Path, help="write to a file instead of stdout")
    _add_common(p)
    return parser


# -- wiring -----------------------------------------------------------------


def _flags(ns: argparse.Namespace) -> dict[str, Any]:
    return {k: v for k, v in vars(ns).items() if "." in k}


def _echo(cfg: dict[str, dict[str, Any]]) -> dict[str, Any]:
    return json.loads(json.dumps(cfg))


def _need(path: Path, what: str) -> Path:
    if not path.is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def make_provider(cfg: dict):
    llm = cfg["llm"]
    if llm["provider"] == "scripted":
        if not llm["script"]:
            raise UsageError("--provider scripted needs --script FILE")
        return ScriptedProvider.from_file(_need(Path(llm["script"]), "script"))
    return ChatCompletionsProvider(
        llm["endpoint_url"], llm["model_name"], timeout_ms=int(llm["timeout_ms"])
    )


def make_embedder_from(cfg: dict):
    e = cfg["embedding"]
    return make_embedder(
        EmbeddingProviderConfig(
            kind=e["kind"],
            endpoint_url=e["endpoint_url"],
            model_name=e["model_name"],
            dim=int(e["dim"]),
            seed=int(e["seed"]),
            timeout_ms=int(e["timeout_ms"]),
            max_retries=int(e["max_retries"]),
            concurrency=int(e["concurrency"]),
        )
    )


def make_scorer(cfg: dict):
    c = cfg["cache"]
    if c["scorer"] == "cosine":
        return CosineScorer()
    if c["scorer"] == "scripted":
        if not c["scorer_script"]:
            raise UsageError("--scorer scripted needs --scorer-script FILE")
        return ScriptedScorer.from_file(_need(Path(c["scorer_script"]), "scorer script"))
    if c["scorer"] == "remote_pair":
        if not c["scorer_url"]:
            raise UsageError("--scorer remote_pair needs --scorer-url or SEMCACHE_SCORER_URL")
        e = cfg["embedding"]
        return RemotePairScorer(c["scorer_url"], timeout_ms=int(e["timeout_ms"]), max_retries=int(e["max_retries"]))
    raise UsageError(f"unknown scorer {c['scorer']!r}")


def make_pipeline(cfg: dict, provider, embedder) -> Pipeline:
    p = cfg["pipeline"]
    pc = PipelineConfig(
        top_n_verification=int(p["top_n_verification"]),
        variations_per_question=int(p["variations_per_question"]),
        dedupe_similarity_ceiling=float(p["dedupe_similarity_ceiling"]),
        domain_terms=p["domain_terms"],
        seed=int(p["seed"]),
        max_document_chars=int(p["max_document_chars"]),
        parallelism=int(p["parallelism"]),
        max_retries=int(cfg["llm"]["max_retries"]),
        model_name=cfg["llm"]["model_name"],
    )
    templates = PromptTemplates.load(p["templates"], p["guidelines"])
    return Pipeline(provider, embedder, pc, templates, config_echo=_echo(cfg))


def _manifest_path(ns: argparse.Namespace) -> Path:
    return ns.manifest or ns.out.parent / "run_manifest.json"


def cmd_generate(ns: argparse.Namespace, cfg: dict) -> int:
    corpus = read_corpus(_need(ns.corpus, "corpus"))
    pipe = make_pipeline(cfg, make_provider(cfg), embedder=None)
    pairs = pipe.generate(corpus)
    write_qa(pairs, ns.out)
    pipe.manifest.write(_manifest_path(ns))
    print(f"generated {len(pairs)} questions from {len(corpus)} documents -> {ns.out}")
    return 0


def cmd_verify(ns: argparse.Namespace, cfg: dict) -> int:
    pairs = read_qa(_need(ns.qa, "QA file"))
    corpus = read_corpus(_need(ns.corpus, "corpus"))
    pipe = make_pipeline(cfg, provider=None, embedder=make_embedder_from(cfg))
    kept, dropped = pipe.verify(pairs, corpus)
    write_qa(kept, ns.out)
    write_qa(dropped, ns.dropped or ns.out.parent / "dropped.jsonl")
    pipe.manifest.write(_manifest_path(ns))
    print(f"kept {len(kept)}, dropped {len(dropped)} (top-{pipe.config.top_n_verification}) -> {ns.out}")
    return 0


def cmd_vary(ns: argparse.Namespace, cfg: dict) -> int:
    pairs = read_qa(_need(ns.qa, "QA file"))
    corpus = read_corpus(_need(ns.corpus, "corpus"))
    pipe = make_pipeline(cfg, make_provider(cfg), make_embedder_from(cfg))
    groups = pipe.vary(pairs, corpus)
    write_dataset(groups, ns.out)
    pipe.manifest.write(_manifest_path(ns))
    n_var = sum(len(g.variations) for g in groups)
    print(f"wrote {len(groups)} groups with {n_var} variations -> {ns.out}")
    return 0


def _plan_and_cache_args(cfg: dict, groups_path: Path):
    groups = read_dataset(_need(groups_path, "dataset"))
    ev = cfg["evaluation"]
    plan = build_plan(groups, ev["order"], int(ev["seed"]))
    threshold = float(cfg["cache"]["threshold"])
    if not 0.0 <= threshold <= 1.0:
        raise UsageError(f"threshold {threshold} is outside [0, 1]")
    return plan, make_embedder_from(cfg), make_scorer(cfg)


def cmd_evaluate(ns: argparse.Namespace, cfg: dict) -> int:
    plan, embedder, scorer = _plan_and_cache_args(cfg, ns.groups)
    c = cfg["cache"]
    cache = SemanticCache(
        embedder,
        CacheConfig(threshold=float(c["threshold"]), top_k_candidates=int(c["top_k_candidates"]),
                    capacity=c["capacity"], scorer=scorer),
    )
    report = replay(plan, cache, cfg["evaluation"]["insert_policy"])
    report.config["run"] = _echo(cfg)
    ns.out.mkdir(parents=True, exist_ok=True)
    (ns.out / "report.json").write_text(summarize(report, "json"), encoding="utf-8")
    write_eval(report.records, ns.out / "eval.jsonl")
    print(summarize(report, "markdown"), end="")
    print(f"total {report.total} queries, threshold {report.threshold} -> {ns.out / 'report.json'}")
    return 0


def cmd_calibrate(ns: argparse.Namespace, cfg: dict) -> int:
    plan, embedder, scorer = _plan_and_cache_args(cfg, ns.groups)
    c = cfg["cache"]
    curve = sweep(plan, ns.thresholds, embedder, scorer, top_k_candidates=int(c["top_k_candidates"]),
                  capacity=c["capacity"], insert_policy=cfg["evaluation"]["insert_policy"])
    ns.out.parent.mkdir(parents=True, exist_ok=True)
    ns.out.write_text(sweep_csv(curve), encoding="utf-8")
    best = curve.best()
    if best is None:
        print("no threshold has a defined F1")
    else:
        print(f"best threshold by F1: {best.threshold} (f1={best.f1:.4f}, "
              f"precision={best.precision:.4f}, recall={best.recall:.4f})")
    return 0


def cmd_report(ns: argparse.Namespace, cfg: dict) -> int:
    try:
        data = json.loads(_need(ns.report, "report").read_text(encoding="utf-8"))
        report = ConfusionReport.from_dict(data)
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read report {ns.report}: {exc}") from None
    text = summarize(report, ns.format)
    if ns.out:
        ns.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "verify": cmd_verify,
    "vary": cmd_vary,
    "evaluate": cmd_evaluate,
    "calibrate": cmd_calibrate,
    "report": cmd_report,
}

USAGE_ERRORS = (UsageError, cfgmod.ConfigError, ValidationError, PipelineError, TemplateError, ValueError, OSError)
RUNTIME_ERRORS = (ProviderError, ContractViolation, ReplayError, EmbeddingError, ScriptMissError)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if ns.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = cfgmod.resolve(ns.config, flags=_flags(ns))
        return COMMANDS[ns.command](ns, cfg)
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, ReplayError):
            print(f"  {len(exc.partial_records)} partial records discarded", file=sys.stderr)
        return 1
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
