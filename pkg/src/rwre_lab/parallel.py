"""Deterministic fan-out of sample ranges over a thread pool.

Work is cut into fixed-size chunks that do not depend on the worker count and
results are returned in chunk order, so any reduction done by the caller in
that order is bit-identical for every ``workers`` value.  The compiled
kernels release the GIL, which is what makes threads useful here.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

CHUNK = 8192


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("RWRE_WORKERS", "1")))
    except ValueError:
        return 1


def chunk_ranges(n: int, chunk: int = CHUNK) -> list[tuple[int, int]]:
    return [(a, min(a + chunk, n)) for a in range(0, n, chunk)]


def map_ordered(fn, items, workers: int | None = None) -> list:
    items = list(items)
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def map_chunks(fn, n: int, workers: int | None = None, chunk: int = CHUNK) -> list:
    """Call ``fn(first, stop)`` on every chunk of ``range(n)``; ordered results."""
    return map_ordered(lambda r: fn(*r), chunk_ranges(n, chunk), workers)
