import asyncio
import logging
from concurrent.futures import ProcessPoolExecutor

from .util import as_coroutine

log = logging.getLogger(__name__)


class Looper:
    """
    A wrapper for an event loop that fans independent jobs out to workers.

    With one worker every job runs inline on the loop; with more, jobs run
    on a process pool. Results always come back in submission order.
    """

    def __init__(self, workers=1, loop=None):
        """
        Initialize the looper.

        When loop is omitted, a private event loop is created.
        """
        if workers < 1:
            raise ValueError('workers must be >= 1')
        self._own_loop = loop is None
        self._loop = loop or asyncio.new_event_loop()
        if not isinstance(self._loop, asyncio.AbstractEventLoop):
            raise TypeError

        self.workers = workers
        self._executor = None
        self._running = False

    @property
    def loop(self):
        return self._loop

    def start(self):
        """Start the worker processes."""
        if self._running:
            return
        if self.workers > 1:
            self._executor = ProcessPoolExecutor(max_workers=self.workers)
        self._running = True

    def stop(self):
        """Stop the worker processes."""
        if not self._running:
            return
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None
        self._running = False

    def close(self):
        self.stop()
        if self._own_loop and not self._loop.is_closed():
            self._loop.close()

    def map(self, func, jobs):
        """
        Run func(*job) for every job and return the results in job order.

        func must be a module level function when workers > 1 so it can be
        sent to the pool. The first failing job's exception is raised after
        it has been logged.
        """
        jobs = [tuple(job) for job in jobs]
        if not jobs:
            return []
        started = self._running
        self.start()
        try:
            tasks = [self._coro_wrapper(func, *job) for job in jobs]
            return self.loop.run_until_complete(self._gather(tasks))
        finally:
            if not started:
                self.stop()

    @staticmethod
    async def _gather(tasks):
        return await asyncio.gather(*tasks)

    async def _coro_wrapper(self, func, *args):
        try:
            if self._executor is None:
                return await as_coroutine(func)(*args)
            return await self.loop.run_in_executor(self._executor, func, *args)
        except asyncio.CancelledError:
            raise
        except Exception as e:
            log.exception(e)
            raise

    def __enter__(self):
        """Enter context manager, equivalent to calling start()."""
        self.start()
        return self

    def __exit__(self, *exc):
        """Exit context manager, equivalent to calling close()."""
        self.close()
