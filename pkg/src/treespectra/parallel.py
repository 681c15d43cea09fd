"""Order-preserving parallel map over independent tasks."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def parallel_map(fn, tasks, workers: int = 1) -> list:
    """``[fn(t) for t in tasks]``, optionally across worker processes.

    Results come back in task order, so any reduction over them is
    independent of the worker count.
    """
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as ex:
        return list(ex.map(fn, tasks, chunksize=1))
