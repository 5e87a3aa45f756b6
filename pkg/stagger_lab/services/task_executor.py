# stagger_lab/services/task_executor.py

"""
Unified task execution service.
Runs simulation cells inline or on Celery workers.
"""

import logging
from typing import Any, Callable, Optional

from ..conf import app_settings
from ..exceptions import StaggerLabError

logger = logging.getLogger("stagger_lab")

# Options understood by Celery's apply_async but not by the task itself.
CELERY_ONLY_KWARGS = ("countdown", "eta", "expires", "queue", "priority")


def _task_name(task_func: Callable) -> str:
    return getattr(task_func, "__name__", repr(task_func))


class TaskExecutor:
    """
    Service for executing tasks either synchronously or asynchronously.
    """

    @staticmethod
    def is_celery_available():
        """True when USE_CELERY is set and celery imports."""
        if not app_settings.USE_CELERY:
            return False

        try:
            from celery import current_app
            return current_app is not None
        except ImportError:
            return False

    @classmethod
    def execute(
        cls,
        task_func: Callable,
        *args,
        use_async: Optional[bool] = None,
        fallback_to_sync: bool = True,
        **kwargs
    ) -> Any:
        """
        Run ``task_func`` on Celery or inline.

        ``use_async=None`` follows ``is_celery_available()``. A failed queue
        falls back to an inline run unless ``fallback_to_sync`` is False.
        Returns the result, or an AsyncResult when queued.
        """
        if use_async is None:
            use_async = cls.is_celery_available()

        if use_async:
            result = cls._execute_async(task_func, *args, **kwargs)

            if result is not None or not fallback_to_sync:
                return result

            logger.warning(
                f"Async execution of '{_task_name(task_func)}' failed, "
                f"falling back to sync"
            )

        return cls._execute_sync(task_func, *args, **kwargs)

    @staticmethod
    def _execute_async(task_func: Callable, *args, **kwargs) -> Any:
        """Queue the task on Celery."""
        if not hasattr(task_func, "delay"):
            logger.error(
                f"Function '{_task_name(task_func)}' is not a Celery task. "
                f"Cannot execute asynchronously."
            )
            return None

        try:
            async_result = task_func.delay(*args, **kwargs)
            logger.debug(f"Task '{_task_name(task_func)}' queued with ID: {async_result.id}")
            return async_result
        except Exception as e:
            logger.error(
                f"Async execution of '{_task_name(task_func)}' failed: {e}",
                exc_info=True
            )
            return None

    @staticmethod
    def _execute_sync(task_func: Callable, *args, **kwargs) -> Any:
        """
        Run the task in-process. StaggerLabError propagates; any other
        failure is logged and returns None.
        """
        for key in CELERY_ONLY_KWARGS:
            kwargs.pop(key, None)
        try:
            result = task_func(*args, **kwargs)
            logger.debug(f"Task '{_task_name(task_func)}' executed synchronously")
            return result
        except StaggerLabError:
            raise
        except Exception as e:
            logger.error(
                f"Sync execution of '{_task_name(task_func)}' failed: {e}",
                exc_info=True
            )
        return None
