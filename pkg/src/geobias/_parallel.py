"""Order-preserving parallel map with a thread cap from the environment."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, TypeVar

T = TypeVar("T")

THREADS_ENV_VAR = "GEOBIAS_THREADS"


def worker_threads() -> int:
    """Thread cap: GEOBIAS_THREADS if set, else machine parallelism."""
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from None
        if n < 1:
            raise ValueError(f"{THREADS_ENV_VAR} must be positive, got {n}")
        return n
    return os.cpu_count() or 1


def parallel_map_indexed(fn: Callable[[int], T], n: int, threads: int | None = None) -> List[T]:
    """Evaluate fn(0..n-1) with worker threads; results in index order.

    Each index is independent (per-index PRNG streams, pure functions), so
    the output is identical for any thread count.
    """
    if threads is None:
        threads = worker_threads()
    out: List[T] = [None] * n  # type: ignore[list-item]
    if threads <= 1 or n < 256:
        for i in range(n):
            out[i] = fn(i)
        return out
    chunk = max(64, (n + threads * 8 - 1) // (threads * 8))

    def run_range(start: int) -> None:
        for i in range(start, min(start + chunk, n)):
            out[i] = fn(i)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(run_range, range(0, n, chunk)))
    return out
