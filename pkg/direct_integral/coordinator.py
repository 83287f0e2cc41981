"""Coordinator for running indexed replicate tasks."""
from __future__ import annotations

import asyncio
from concurrent.futures import ThreadPoolExecutor
import logging
from typing import Callable, Generic, TypeVar

import numpy as np

_LOGGER = logging.getLogger(__name__)

T = TypeVar("T")


def replicate_rng(seed: int, *key: int) -> np.random.Generator:
    """Return the random stream for a replicate key.

    Streams depend only on ``(seed, key)``, never on the order in which
    replicates are scheduled.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


class ReplicateCoordinator(Generic[T]):
    """Class to manage running independent replicate tasks."""

    def __init__(self, name: str, threads: int = 1) -> None:
        """Initialize."""
        self.name = name
        self.threads = max(1, int(threads))

    def run(self, task: Callable[[int], T], count: int) -> list[T]:
        """Run ``task(index)`` for every index and return results in index order."""
        if count <= 0:
            return []
        if self.threads == 1:
            _LOGGER.debug("%s: running %d replicates inline", self.name, count)
            return [task(index) for index in range(count)]
        _LOGGER.debug(
            "%s: running %d replicates on %d threads", self.name, count, self.threads
        )
        with self._executor() as executor:
            futures = [executor.submit(task, index) for index in range(count)]
            # the first failure by index wins, as in the inline path
            return [future.result() for future in futures]

    def _executor(self) -> ThreadPoolExecutor:
        return ThreadPoolExecutor(max_workers=self.threads, thread_name_prefix=self.name)

    async def async_run(self, task: Callable[[int], T], count: int) -> list[T]:
        """Schedule the replicates on a worker pool from the event loop."""
        if count <= 0:
            return []
        _LOGGER.debug(
            "%s: running %d replicates on %d threads", self.name, count, self.threads
        )
        loop = asyncio.get_running_loop()
        with self._executor() as executor:
            futures = [
                loop.run_in_executor(executor, task, index) for index in range(count)
            ]
            # gather keeps submission order regardless of completion order
            results = await asyncio.gather(*futures, return_exceptions=True)
        for result in results:
            if isinstance(result, BaseException):
                raise result
        return list(results)
