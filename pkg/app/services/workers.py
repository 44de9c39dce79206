"""
Ordered fan-out of independent jobs over worker processes.
"""
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, TypeVar
import logging

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def run_ordered(fn: Callable[[T], R], items: Iterable[T], workers: int = 1, chunksize: int = 8) -> List[R]:
    """
    Apply ``fn`` to every item and return the results in input order.

    With ``workers > 1`` the calls run in a process pool; ``fn`` and the items
    must then be picklable. Output order never depends on completion order.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    logger.info(f"Fanning out {len(items)} jobs over {workers} workers")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))
