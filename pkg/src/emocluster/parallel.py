"""Worker-count resolution and keyed parallel mapping for per-speaker jobs."""

import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "EMOCLUSTER_THREADS"


def worker_count() -> int:
    """Workers to use: EMOCLUSTER_THREADS if set, else machine parallelism."""
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


def map_keyed(fn, items: dict, max_workers: int | None = None) -> dict:
    """Apply fn to every value of items, possibly concurrently.

    Results are merged by key, so the outcome is independent of scheduling
    order; fn must be deterministic per item.
    """
    workers = max_workers if max_workers is not None else worker_count()
    if workers <= 1 or len(items) <= 1:
        return {key: fn(key, value) for key, value in items.items()}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {key: pool.submit(fn, key, value) for key, value in items.items()}
        return {key: fut.result() for key, fut in futures.items()}
