"""
stagger_lab - event-study diagnostics, robust estimation and sensitivity
analysis for staggered treatment adoption.
"""

__version__ = '0.1.0'

from .constants import NEVER
from .exceptions import StaggerLabError
from .models import EventWindow, Panel, read_panel_csv

__all__ = [
    'NEVER',
    'StaggerLabError',
    'EventWindow',
    'Panel',
    'read_panel_csv',
]
