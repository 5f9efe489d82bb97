"""Deterministic worker-thread helpers.

The environment variable QGBC_THREADS caps worker parallelism (default: the
machine's core count).  Work is always partitioned into blocks whose layout
depends only on the problem size, never on the worker count, and partial
results are combined in block-index order -- so outputs are bit-identical for
any QGBC_THREADS value.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_VAR = "QGBC_THREADS"


def worker_count() -> int:
    raw = os.environ.get(ENV_VAR)
    if raw is None or raw.strip() == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"{ENV_VAR} must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ValueError(f"{ENV_VAR} must be >= 1, got {n}")
    return n


def block_ranges(n_items: int, block_size: int) -> list[tuple[int, int]]:
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    return [(s, min(s + block_size, n_items)) for s in range(0, n_items, block_size)]


def run_blocks(fn, n_items: int, block_size: int) -> list:
    """Evaluate fn(start, stop) over fixed-size index blocks.

    Returns the per-block results in block order.  Blocks may execute
    concurrently on up to worker_count() threads; the caller folds the
    ordered partials, which keeps reductions reproducible.
    """
    ranges = block_ranges(n_items, block_size)
    workers = worker_count()
    if workers == 1 or len(ranges) <= 1:
        return [fn(s, e) for s, e in ranges]
    with ThreadPoolExecutor(max_workers=min(workers, len(ranges))) as pool:
        return list(pool.map(lambda span: fn(*span), ranges))
