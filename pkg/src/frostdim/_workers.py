"""Thread pool sized by the FROSTMAN_THREADS environment variable."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count() -> int:
    raw = os.environ.get("FROSTMAN_THREADS", "")
    try:
        cap = int(raw)
    except ValueError:
        cap = 0
    default = min(8, os.cpu_count() or 1)
    return max(1, min(cap, default) if cap > 0 else default)


def parallel_map(fn, items):
    """Ordered ``map`` over a thread pool; results are deterministic."""
    items = list(items)
    workers = worker_count()
    if workers == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
