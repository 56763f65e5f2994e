"""Deterministic fan-out of independent tasks to a bounded worker pool."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Sequence[T], *, workers: int = 1) -> list[R]:
    """Map ``fn`` over ``items``, preserving input order in the result.

    With workers <= 1 everything runs in-process.  Otherwise items are
    dispatched to a process pool; ``executor.map`` already yields results in
    submission order, which keeps outputs independent of scheduling.
    """
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        chunk = max(1, len(items) // (4 * workers))
        return list(pool.map(fn, items, chunksize=chunk))
