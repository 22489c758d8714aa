"""Worker-count handling.

`XFERKIT_THREADS` caps the pool size. Results are collected in input
order and all reductions happen sequentially in canonical order, so
output is identical for any thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def worker_count() -> int:
    env = os.environ.get("XFERKIT_THREADS", "").strip()
    cpus = os.cpu_count() or 1
    if not env:
        return cpus
    try:
        requested = int(env)
    except ValueError:
        raise ValueError(f"XFERKIT_THREADS must be an integer, got {env!r}") from None
    if requested < 1:
        raise ValueError("XFERKIT_THREADS must be at least 1")
    return min(requested, cpus) if requested > 1 else 1


def parallel_map(fn: Callable[[T], R], items: Sequence[T] | Iterable[T]) -> list[R]:
    items = list(items)
    workers = min(worker_count(), max(1, len(items)))
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
