# parallel.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""Fan work out over a pool of workers.

Results always come back in input order, so runs stay deterministic
regardless of the number of workers.
"""

from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

from surrogate_kit.debug import debug_print

T = TypeVar("T")
R = TypeVar("R")


def fan_out(func: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """Apply func to every item; use a thread pool if workers > 1.

    Every task must be independent (own seed, read-only shared state).
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    debug_print(3, f"Fanning out {len(items)} tasks over {workers} workers")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map preserves input order
        return list(pool.map(func, items))
