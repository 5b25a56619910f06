"""HTTP helpers shared by the remote embedding, scoring and chat clients:
JSON POST with status classification, and retry with full-jitter backoff."""

from __future__ import annotations

import logging
import os
import random
import time
from dataclasses import dataclass
from typing import Any, Callable, TypeVar

import httpx

from .errors import ContractViolation, ProviderError, TransientProviderError

log = logging.getLogger(__name__)

T = TypeVar("T")

API_KEY_ENV = "SEMCACHE_API_KEY"


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 3
    base_delay: float = 0.5  # seconds
    factor: float = 2.0
    max_delay: float = 30.0

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")

    def delay(self, retry_index: int, rng: random.Random) -> float:
        """Full jitter: uniform in [0, base * factor**retry_index], capped."""
        ceiling = min(self.max_delay, self.base_delay * self.factor**retry_index)
        return rng.uniform(0.0, ceiling)


def call_with_retry(
    fn: Callable[[], T],
    policy: RetryPolicy,
    *,
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
    on_attempt: Callable[[bool], None] | None = None,
) -> T:
    """Call ``fn`` until it succeeds, retrying only ``TransientProviderError``.

    ``on_attempt(ok)`` fires once per attempt. Raised errors carry the number
    of attempts made in ``.attempts``.
    """
    rng = rng or random.Random()
    attempt = 0
    while True:
        attempt += 1
        try:
            result = fn()
        except TransientProviderError as exc:
            if on_attempt:
                on_attempt(False)
            if attempt > policy.max_retries:
                raise ProviderError(
                    f"giving up after {attempt} attempts: {exc}", attempts=attempt, status=exc.status
                ) from exc
            wait = policy.delay(attempt - 1, rng)
            log.warning("transient failure (attempt %d): %s; retrying in %.2fs", attempt, exc, wait)
            sleep(wait)
            continue
        except ProviderError as exc:
            if on_attempt:
                on_attempt(False)
            exc.attempts = attempt
            raise
        if on_attempt:
            on_attempt(True)
        return result


def auth_headers() -> dict[str, str]:
    key = os.environ.get(API_KEY_ENV)
    return {"Authorization": f"Bearer {key}"} if key else {}


def post_json(client: httpx.Client, url: str, payload: dict[str, Any]) -> Any:
    """POST ``payload`` and return the decoded JSON body.

    Transport errors, 429 and 5xx raise ``TransientProviderError``; other
    non-2xx statuses raise ``ProviderError``; an undecodable body raises
    ``ContractViolation``.
    """
    try:
        resp = client.post(url, json=payload, headers=auth_headers())
    except httpx.TransportError as exc:
        raise TransientProviderError(f"POST {url}: {exc.__class__.__name__}: {exc}") from exc
    status = resp.status_code
    if status == 429 or status >= 500:
        raise TransientProviderError(f"POST {url}: HTTP {status}", status=status)
    if status >= 400:
        raise ProviderError(f"POST {url}: HTTP {status}: {resp.text[:200]}", status=status)
    try:
        return resp.json()
    except ValueError as exc:
        raise ContractViolation(f"POST {url}: response is not JSON") from exc


def make_client(timeout_ms: int, client: httpx.Client | None = None) -> httpx.Client:
    return client if client is not None else httpx.Client(timeout=timeout_ms / 1000.0)
