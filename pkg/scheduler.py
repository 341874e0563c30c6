from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar
import logging

from config import settings

T = TypeVar("T")
R = TypeVar("R")


class WorkScheduler:
    """Fans independent per-item work out over a bounded thread pool.

    Items are processed batch by batch and results come back in submission
    order, so the output never depends on how the pool schedules work.
    """

    def __init__(self, max_workers: Optional[int] = None, batch_size: int = 256):
        self.max_workers = max_workers
        self.batch_size = batch_size
        self.logger = logging.getLogger(__name__)

    @property
    def workers(self) -> int:
        return max(1, self.max_workers or settings.threads)

    def map(self, fn: Callable[[T], R], items: Iterable[T], description: str = "items") -> List[R]:
        """Apply ``fn`` to every item and return the results in input order."""
        items = list(items)
        total = len(items)
        if total == 0:
            return []

        results: List[R] = []
        if self.workers == 1:
            for i in range(0, total, self.batch_size):
                results.extend(fn(item) for item in items[i:i + self.batch_size])
                self._report(len(results), total, description)
            return results

        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            for i in range(0, total, self.batch_size):
                batch = items[i:i + self.batch_size]
                results.extend(pool.map(fn, batch))
                self._report(len(results), total, description)
        return results

    def _report(self, done: int, total: int, description: str):
        if total > self.batch_size:
            self.logger.info(f"Processed {done}/{total} {description}")


scheduler = WorkScheduler()
