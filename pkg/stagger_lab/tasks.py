# stagger_lab/tasks.py

"""
Celery tasks for Monte Carlo cells, with a plain-function fallback.
"""

import logging
from typing import Any, Dict, List, Optional

from .conf import app_settings

logger = logging.getLogger("stagger_lab")

try:
    from celery import shared_task
    CELERY_AVAILABLE = True
except ImportError:
    CELERY_AVAILABLE = False

    def shared_task(*args, **kwargs):
        def decorator(func):
            return func
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return decorator


# === SIMULATION TASKS ===

@shared_task(name="stagger_lab.run_cell")
def run_cell_task(
    spec: Dict[str, Any],
    estimators: List[str],
    R: int,
    base_seed: int,
    threads: Optional[int] = None,
) -> Dict[str, Dict[str, Any]]:
    """Run one violation cell and return its metrics as JSON-safe dicts."""
    from .montecarlo import DgpSpec, run_cell

    dgp = DgpSpec.from_dict(spec)
    threads = app_settings.THREADS if threads is None else threads
    metrics = run_cell(dgp, estimators, R=R, base_seed=base_seed, threads=threads)
    logger.debug(f"run_cell_task finished cell {dgp.cell} of {dgp.design.value}")
    return {kind.value: m.to_dict() for kind, m in metrics.items()}

