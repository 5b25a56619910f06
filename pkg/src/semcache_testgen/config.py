"""Layered run configuration: defaults < TOML file < environment < flags.

Every setting has a dotted name ``section.key`` (``cache.threshold``,
``pipeline.top_n_verification``, ...). The environment can set any of them
as ``SEMCACHE_<SECTION>_<KEY>``; a few endpoints also have short aliases.
Secrets are only ever read from ``SEMCACHE_API_KEY`` and never echoed.
"""

from __future__ import annotations

import copy
import os
import sys
from pathlib import Path
from typing import Any, Callable, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULTS: dict[str, dict[str, Any]] = {
    "llm": {
        "provider": "remote",
        "script": None,
        "endpoint_url": None,
        "model_name": "default",
        "timeout_ms": 60_000,
        "max_retries": 3,
    },
    "embedding": {
        "kind": "deterministic_local",
        "endpoint_url": None,
        "model_name": None,
        "dim": 256,
        "seed": 0,
        "timeout_ms": 30_000,
        "max_retries": 3,
        "concurrency": 4,
    },
    "pipeline": {
        "top_n_verification": 3,
        "variations_per_question": 10,
        "dedupe_similarity_ceiling": 0.98,
        "domain_terms": None,
        "seed": 0,
        "max_document_chars": 24_000,
        "parallelism": 4,
        "templates": None,
        "guidelines": None,
    },
    "cache": {
        "threshold": 0.9,
        "top_k_candidates": 5,
        "capacity": None,
        "scorer": "cosine",
        "scorer_url": None,
        "scorer_script": None,
    },
    "evaluation": {
        "order": "seeded_shuffle",
        "seed": 0,
        "insert_policy": "miss",
    },
}


def _optional(kind: Callable[[str], Any]) -> Callable[[str], Any]:
    return lambda s: None if s.strip().lower() in ("", "none", "null") else kind(s)


def _terms(s: str) -> list[str]:
    return [t.strip() for t in s.split(",") if t.strip()]


_PARSERS: dict[str, Callable[[str], Any]] = {
    "embedding.dim": int,
    "embedding.seed": int,
    "embedding.timeout_ms": int,
    "embedding.max_retries": int,
    "embedding.concurrency": int,
    "llm.timeout_ms": int,
    "llm.max_retries": int,
    "pipeline.top_n_verification": int,
    "pipeline.variations_per_question": int,
    "pipeline.dedupe_similarity_ceiling": float,
    "pipeline.domain_terms": _optional(_terms),
    "pipeline.seed": int,
    "pipeline.max_document_chars": int,
    "pipeline.parallelism": int,
    "cache.threshold": float,
    "cache.top_k_candidates": int,
    "cache.capacity": _optional(int),
    "evaluation.seed": int,
}

ENV_ALIASES = {
    "SEMCACHE_LLM_URL": "llm.endpoint_url",
    "SEMCACHE_EMBED_URL": "embedding.endpoint_url",
    "SEMCACHE_SCORER_URL": "cache.scorer_url",
}

SECRET_KEYS = {"api_key", "token", "password", "secret"}


class ConfigError(ValueError):
    pass


def _set(cfg: dict, dotted: str, value: Any) -> None:
    section, _, key = dotted.partition(".")
    if section not in DEFAULTS or key not in DEFAULTS[section]:
        raise ConfigError(f"unknown setting {dotted!r}")
    if key in SECRET_KEYS:
        raise ConfigError(f"{dotted!r}: secrets may only come from the environment")
    cfg[section][key] = value


def parse_value(dotted: str, raw: str) -> Any:
    parser = _PARSERS.get(dotted, _optional(str))
    try:
        return parser(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {dotted}: {raw!r} ({exc})") from None


def resolve(
    config_file: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    flags: Mapping[str, Any] | None = None,
) -> dict[str, dict[str, Any]]:
    """Merge the four layers; ``flags`` entries that are None are ignored."""
    cfg = copy.deepcopy(DEFAULTS)
    if config_file is not None:
        try:
            data = tomllib.loads(Path(config_file).read_text(encoding="utf-8"))
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config file {config_file}: {exc}") from None
        for section, table in data.items():
            if not isinstance(table, dict):
                raise ConfigError(f"config file: top-level key {section!r} must be a table")
            for key, value in table.items():
                _set(cfg, f"{section}.{key}", value)
    env = os.environ if env is None else env
    for var, dotted in ENV_ALIASES.items():
        if env.get(var):
            _set(cfg, dotted, env[var])
    for section, table in DEFAULTS.items():
        for key in table:
            var = f"SEMCACHE_{section}_{key}".upper()
            if var in env:
                _set(cfg, f"{section}.{key}", parse_value(f"{section}.{key}", env[var]))
    for dotted, value in (flags or {}).items():
        if value is not None:
            _set(cfg, dotted, value)
    return cfg
