# stagger_lab/montecarlo/__init__.py

"""
Simulation designs, placebo tests and the replication harness.
"""

from .dgp import (
    ConfoundedProfile,
    DgpSpec,
    TrueTargets,
    benchmark_targets,
    population_shares,
    pooled_target,
    simulate,
    true_targets,
    violation_matrix,
    violation_term,
)
from .harness import (
    CellMetrics,
    ComponentMetrics,
    GridResult,
    fill_admissibility,
    grid_cells,
    placebo_frontier,
    placebo_table,
    replicate,
    run_cell,
    run_grid,
)
from .placebo import PlaceboResult, placebo_rates, placebo_test
from .presets import PRESETS, Preset, get_grid, get_preset

__all__ = [
    'ConfoundedProfile',
    'DgpSpec',
    'TrueTargets',
    'benchmark_targets',
    'population_shares',
    'pooled_target',
    'simulate',
    'true_targets',
    'violation_matrix',
    'violation_term',
    'CellMetrics',
    'ComponentMetrics',
    'GridResult',
    'fill_admissibility',
    'grid_cells',
    'placebo_frontier',
    'placebo_table',
    'replicate',
    'run_cell',
    'run_grid',
    'PlaceboResult',
    'placebo_rates',
    'placebo_test',
    'PRESETS',
    'Preset',
    'get_grid',
    'get_preset',
]
