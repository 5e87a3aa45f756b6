# stagger_lab/services/__init__.py

"""
Services package: task execution and the command pipeline.
"""

from .task_executor import TaskExecutor
from .pipeline import RunConfig, load_config, run_pipeline, verify_manifest

__all__ = [
    'TaskExecutor',
    'RunConfig',
    'load_config',
    'run_pipeline',
    'verify_manifest',
]
