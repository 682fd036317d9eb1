"""Worker pool sizing shared by ensemble training and rendering.

RADIANT_THREADS caps the worker count; 0 or unset means all cores.
Mapped results preserve input order regardless of completion order, so
parallel and serial execution give identical outputs.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count(n_tasks):
    env = os.environ.get("RADIANT_THREADS")
    limit = 0
    if env is not None:
        try:
            limit = int(env)
        except ValueError:
            raise ValueError(
                f"RADIANT_THREADS must be an integer, got {env!r}"
            ) from None
        if limit < 0:
            raise ValueError("RADIANT_THREADS must be >= 0")
    if limit == 0:
        limit = os.cpu_count() or 1
    return max(1, min(limit, n_tasks))


def parallel_map(fn, items):
    items = list(items)
    workers = worker_count(len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
