# stagger_lab/tests/test_task_executor.py

"""
Tests for TaskExecutor.
Tests cover Celery availability, inline and queued execution, fallback,
and propagation of package errors.
"""

import sys
from unittest import TestCase
from unittest.mock import MagicMock, patch

from stagger_lab.conf import override_settings
from stagger_lab.exceptions import CellFailed
from stagger_lab.services.task_executor import CELERY_ONLY_KWARGS, TaskExecutor


def cell_sum(cell, scale=1.0):
    return scale * sum(cell)


# ============================================================================
# CELERY AVAILABILITY TESTS
# ============================================================================

class TaskExecutorCeleryAvailabilityTests(TestCase):
    """Test Celery availability detection."""

    @override_settings(STAGGER_LAB_USE_CELERY=False)
    def test_unavailable_when_disabled(self):
        """Test Celery is not used when disabled in settings."""
        self.assertFalse(TaskExecutor.is_celery_available())

    @override_settings(STAGGER_LAB_USE_CELERY=True)
    def test_unavailable_when_import_fails(self):
        """Test Celery is not used when it cannot be imported."""
        with patch.dict(sys.modules, {"celery": None}):
            self.assertFalse(TaskExecutor.is_celery_available())

    @override_settings(STAGGER_LAB_USE_CELERY=True)
    def test_available_when_enabled(self):
        """Test Celery is used when enabled and importable."""
        with patch.dict(sys.modules, {"celery": MagicMock()}):
            self.assertTrue(TaskExecutor.is_celery_available())


# ============================================================================
# SYNCHRONOUS EXECUTION TESTS
# ============================================================================

class TaskExecutorSyncTests(TestCase):
    """Test inline execution."""

    @override_settings(STAGGER_LAB_USE_CELERY=False)
    def test_positional_and_keyword_arguments(self):
        """Test inline execution passes arguments through."""
        self.assertEqual(TaskExecutor.execute(cell_sum, (0.5, 1.0, 0.1), scale=2.0), 3.2)

    @override_settings(STAGGER_LAB_USE_CELERY=False)
    def test_celery_options_are_dropped(self):
        """Test queue options never reach the task when run inline."""
        options = {key: 1 for key in CELERY_ONLY_KWARGS}
        self.assertEqual(TaskExecutor.execute(cell_sum, (1.0, 2.0), **options), 3.0)

    @override_settings(STAGGER_LAB_USE_CELERY=False)
    def test_failure_returns_none(self):
        """Test a failing task yields None instead of raising."""
        def failing_cell():
            raise ValueError("replication failed")

        with self.assertLogs("stagger_lab", level="ERROR"):
            self.assertIsNone(TaskExecutor.execute(failing_cell))

    @override_settings(STAGGER_LAB_USE_CELERY=False)
    def test_package_errors_propagate(self):
        """Test a StaggerLabError raised by the task reaches the caller."""
        def failing_cell():
            raise CellFailed("no metrics", details={"cell": [0.0, 1.0, 0.0]})

        with self.assertRaises(CellFailed) as ctx:
            TaskExecutor.execute(failing_cell)
        self.assertEqual(ctx.exception.details["cell"], [0.0, 1.0, 0.0])


# ============================================================================
# ASYNCHRONOUS EXECUTION TESTS
# ============================================================================

class TaskExecutorAsyncTests(TestCase):
    """Test queued execution."""

    def _celery_task(self):
        task = MagicMock()
        task.__name__ = "run_cell"
        task.delay.return_value = MagicMock(id="cell-1")
        return task

    @patch("stagger_lab.services.task_executor.TaskExecutor.is_celery_available", return_value=True)
    def test_delay_is_used(self, mock_available):
        """Test a Celery task is queued with its arguments."""
        task = self._celery_task()
        result = TaskExecutor.execute(task, {"design": "mc84-small"}, ["group-time"], 10, 0)
        task.delay.assert_called_once_with({"design": "mc84-small"}, ["group-time"], 10, 0)
        self.assertEqual(result.id, "cell-1")

    def test_plain_function_falls_back_to_sync(self):
        """Test a function without delay runs inline when async is forced."""
        self.assertEqual(TaskExecutor.execute(cell_sum, (1.0, 1.0), use_async=True), 2.0)

    def test_queue_failure_falls_back_to_sync(self):
        """Test a broker error runs the task inline."""
        task = self._celery_task()
        task.delay.side_effect = ConnectionError("broker down")
        task.return_value = {"group-time": {}}
        self.assertEqual(TaskExecutor.execute(task, use_async=True), {"group-time": {}})

    def test_queue_failure_without_fallback(self):
        """Test a broker error yields None when fallback is off."""
        task = self._celery_task()
        task.delay.side_effect = ConnectionError("broker down")
        self.assertIsNone(TaskExecutor.execute(task, use_async=True, fallback_to_sync=False))
        task.assert_not_called()


