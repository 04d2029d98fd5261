from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from ..core.config import config

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """
    Map ``fn`` over ``items`` keeping input order.

    Dense eigensolves release the GIL, so a thread pool is enough for the
    independent cluster evaluations this is used for.
    """
    items = list(items)
    workers = threads if threads is not None else config.threads
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))
