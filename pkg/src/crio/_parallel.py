"""Order-preserving process-pool map, capped by ``CRIO_NUM_WORKERS``."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

ENV_VAR = "CRIO_NUM_WORKERS"


def worker_count(requested: int | None = None) -> int:
    """Resolve the worker count from the request, the environment cap and the CPU count."""
    n = (os.cpu_count() or 1) if requested is None else int(requested)
    cap = os.environ.get(ENV_VAR)
    if cap:
        try:
            n = min(n, int(cap))
        except ValueError:
            raise ValueError(f"{ENV_VAR} must be an integer, got {cap!r}") from None
    return max(1, n)


def pmap(func: Callable[[T], R], items: Sequence[T], workers: int | None = None) -> list[R]:
    """Map ``func`` over ``items``; results come back in input order."""
    items = list(items)
    n = min(worker_count(workers), len(items))
    if n <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(func, items))
