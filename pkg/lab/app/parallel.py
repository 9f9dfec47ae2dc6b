"""
Worker pool for independent sweep points.
Worker count comes from TUBELAB_WORKERS; results are always returned in submission order.
"""

import logging
import os
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def worker_count() -> int:
    """Get the configured number of workers."""
    raw = os.environ.get("TUBELAB_WORKERS", str(os.cpu_count() or 1))
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning(f"Ignoring invalid TUBELAB_WORKERS={raw!r}, using 1 worker")
        return 1


@contextmanager
def get_executor():
    """Get a thread pool sized from the environment."""
    pool = ThreadPoolExecutor(max_workers=worker_count())
    try:
        yield pool
    finally:
        pool.shutdown(wait=True)


def map_ordered(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    """
    Apply fn to every item, in parallel when more than one worker is configured.

    Args:
        fn: Function of one argument, must not mutate shared state
        items: Inputs

    Returns:
        Results in the order of items
    """
    items = list(items)
    if worker_count() == 1 or len(items) < 2:
        return [fn(item) for item in items]
    with get_executor() as pool:
        return list(pool.map(fn, items))
