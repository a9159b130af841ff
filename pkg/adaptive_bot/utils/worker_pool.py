from multiprocessing.pool import Pool
from typing import Callable, Iterable, Iterator, List, TypeVar, Union


T = TypeVar("T")
R = TypeVar("R")


class SequentialWorkerPool:
    """Runs tasks in the calling process with the subset of the multiprocessing.Pool interface
    used by the campaign runner. Used for num_workers <= 1 and for interactive debugging."""

    def __enter__(self) -> "SequentialWorkerPool":
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        pass

    def close(self) -> None:
        pass

    def join(self) -> None:
        pass

    def map(self, func: Callable[[T], R], iterable: Iterable[T], chunksize=None) -> List[R]:
        return [func(arg) for arg in iterable]

    def imap(
        self, func: Callable[[T], R], iterable: Iterable[T], chunksize: int = 1
    ) -> Iterator[R]:
        for arg in iterable:
            yield func(arg)


def get_worker_pool(num_workers: int) -> Union[Pool, SequentialWorkerPool]:
    if num_workers <= 1:
        return SequentialWorkerPool()
    return Pool(num_workers)
