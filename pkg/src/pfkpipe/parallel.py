"""Thread-pool helper. PFKPIPE_THREADS controls the worker count (default 1)."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def thread_count() -> int:
    raw = os.environ.get("PFKPIPE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(n, 1)


def ordered_map(fn, items):
    """Apply fn over items, possibly concurrently, preserving input order."""
    items = list(items)
    workers = thread_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
