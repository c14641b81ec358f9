"""Order-preserving worker pools; results never depend on the job count."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from typing import Callable, Iterator


@contextmanager
def worker_map(jobs: int, initializer: Callable | None = None, initargs: tuple = ()) -> Iterator[Callable]:
    """Yield a ``map``-like callable backed by ``jobs`` processes (in-process when ``jobs <= 1``)."""
    if jobs <= 1:
        if initializer is not None:
            initializer(*initargs)
        yield map
        return
    with ProcessPoolExecutor(max_workers=jobs, initializer=initializer, initargs=initargs) as ex:
        yield lambda fn, items: ex.map(fn, items, chunksize=4)
