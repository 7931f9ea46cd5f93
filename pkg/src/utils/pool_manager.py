"""
Worker pool for Monte-Carlo trials.
"""

from concurrent.futures import Future, ProcessPoolExecutor, as_completed
from typing import Any, Callable, Dict, List, Optional, Sequence

from tqdm import tqdm

from src.config import worker_count
from src.utils.errors import TrialError
from src.utils.logger import setup_logger

logger = setup_logger(__name__)


class TrialPoolManager:
    """Runs independent trial tasks over a process pool and returns results in task order."""

    def __init__(self, workers: Optional[int] = None):
        self.workers = workers if workers is not None else worker_count()
        self._executor: Optional[ProcessPoolExecutor] = None

    def _pool(self) -> ProcessPoolExecutor:
        if self._executor is None:
            logger.info(f"Starting trial pool with {self.workers} workers")
            self._executor = ProcessPoolExecutor(max_workers=self.workers)
        return self._executor

    def run(
        self,
        handler: Callable[..., Any],
        tasks: Sequence[tuple],
        contexts: Optional[Sequence[Dict[str, Any]]] = None,
        description: str = "trials",
        progress: bool = True,
    ) -> List[Any]:
        """
        Execute ``handler(*task)`` for every task.

        Args:
            handler: Picklable module-level function
            tasks: Argument tuples, one per trial
            contexts: Per-task context attached to a failure
            description: Progress-bar label
            progress: Show a tqdm progress bar

        Returns:
            Results ordered like ``tasks``

        Raises:
            TrialError: When a task fails; carries the task's context
        """
        contexts = contexts or [{"task": i} for i in range(len(tasks))]
        bar = tqdm(total=len(tasks), desc=description, disable=not progress, leave=False)
        results: List[Any] = [None] * len(tasks)

        try:
            if self.workers <= 1:
                for i, task in enumerate(tasks):
                    results[i] = self._call(handler, task, contexts[i])
                    bar.update()
                return results

            futures: Dict[Future, int] = {
                self._pool().submit(handler, *task): i for i, task in enumerate(tasks)
            }
            for future in as_completed(futures):
                i = futures[future]
                try:
                    results[i] = future.result()
                except TrialError:
                    raise
                except Exception as e:
                    self._report(e, contexts[i])
                    raise TrialError(str(e), contexts[i]) from e
                bar.update()
            return results
        finally:
            bar.close()

    def _call(self, handler: Callable[..., Any], task: tuple, context: Dict[str, Any]) -> Any:
        try:
            return handler(*task)
        except TrialError:
            raise
        except Exception as e:
            self._report(e, context)
            raise TrialError(str(e), context) from e

    @staticmethod
    def _report(error: Exception, context: Dict[str, Any]):
        logger.error(f"Trial failed: {error} context={context}", exc_info=True)

    def shutdown(self):
        """Stop the worker processes."""
        if self._executor is not None:
            logger.info("Shutting down trial pool")
            self._executor.shutdown(wait=True, cancel_futures=True)
            self._executor = None


# Global pool manager instance
_pool_manager: Optional[TrialPoolManager] = None


def get_pool_manager() -> TrialPoolManager:
    """Get the global trial pool manager."""
    global _pool_manager
    if _pool_manager is None:
        _pool_manager = TrialPoolManager()
    return _pool_manager
