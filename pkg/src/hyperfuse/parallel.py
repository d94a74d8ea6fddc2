"""Order-preserving chunked thread pool.

Results are concatenated in chunk order, so the worker count only changes
wall time, never output.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

from .errors import ConfigError

T = TypeVar("T")

THREADS_ENV = "HYPERFUSE_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else ``$HYPERFUSE_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get(THREADS_ENV, "").strip()
        if not env:
            return 1
        if not env.isdigit():
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        threads = int(env)
    if int(threads) < 1:
        raise ConfigError(f"thread count must be at least 1, got {threads}")
    return int(threads)


def map_chunks(fn: Callable[[int, int], T], n: int, chunk: int, threads: int = 1) -> list[T]:
    """Apply ``fn(lo, hi)`` over ``range(n)`` in chunks; results in chunk order."""
    bounds = [(lo, min(n, lo + chunk)) for lo in range(0, n, max(1, chunk))]
    if threads <= 1 or len(bounds) <= 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))
