"""Deterministic parallel mapping over independent work items."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def parallel_map(fn, items, workers: int = 1) -> list:
    """Apply ``fn`` to each item, preserving order.

    With ``workers > 1`` the work runs in a process pool; results are
    collected in input order, so the output is identical to the serial path.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
