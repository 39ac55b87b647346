"""Deterministic task-parallel execution over subgraph ids.

Per-subgraph work (spectral solves, patch solves) is embarrassingly
parallel.  Workers are forked processes that inherit the heavy read-only
context (network, partition, auxiliary space) without pickling; results
are merged in task order, and every task body runs with BLAS threading
pinned to one thread in every mode, so the assembled output is bitwise
identical for any worker count.
"""

from __future__ import annotations

import concurrent.futures
import multiprocessing
import os
from typing import Any, Callable, Iterable, Sequence

from threadpoolctl import threadpool_limits

from .errors import InvalidParameterError

_CONTEXT: Any = None


def get_context() -> Any:
    """Read the shared read-only context inside a worker."""
    return _CONTEXT


def _set_context(ctx: Any) -> None:
    global _CONTEXT
    _CONTEXT = ctx


def _run_one(args: tuple[Callable[..., Any], Any]) -> Any:
    fn, item = args
    with threadpool_limits(limits=1):
        return fn(item)


def resolve_workers(requested: int | None) -> int:
    """Worker count: explicit argument, else NETCEM_THREADS, else 1."""
    if requested is not None:
        if requested < 1:
            raise InvalidParameterError(f"worker count must be >= 1, got {requested}")
        return requested
    env = os.environ.get("NETCEM_THREADS", "").strip()
    if env:
        try:
            value = int(env)
        except ValueError as exc:
            raise InvalidParameterError(f"NETCEM_THREADS={env!r} is not an integer") from exc
        if value < 1:
            raise InvalidParameterError(f"NETCEM_THREADS must be >= 1, got {value}")
        return value
    return 1


def parallel_map(
    fn: Callable[[Any], Any],
    items: Sequence[Any],
    *,
    workers: int = 1,
    context: Any = None,
) -> list[Any]:
    """Apply ``fn`` to every item, in order, with ``workers`` processes.

    ``context`` is installed module-globally before the pool forks so
    workers see it through ``get_context``; the serial path installs it
    the same way.  Results always come back in input order.
    """
    items = list(items)
    if workers < 1:
        raise InvalidParameterError("workers must be >= 1")
    _set_context(context)
    try:
        if workers == 1 or len(items) <= 1:
            return [_run_one((fn, item)) for item in items]
        mp_ctx = multiprocessing.get_context("fork")
        chunk = max(1, len(items) // (workers * 4))
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=workers, mp_context=mp_ctx
        ) as pool:
            return list(
                pool.map(_run_one, [(fn, item) for item in items], chunksize=chunk)
            )
    finally:
        _set_context(None)
