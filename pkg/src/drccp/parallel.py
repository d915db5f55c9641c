"""Thread-pool helper capped by the ``DRCCP_THREADS`` environment variable."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def thread_count(default: int = 1) -> int:
    raw = os.environ.get("DRCCP_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        return default


def pmap(fn, items, threads: int | None = None) -> list:
    """Order-preserving map; sequential when one thread is allowed."""
    items = list(items)
    threads = thread_count() if threads is None else max(1, threads)
    if threads == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))
