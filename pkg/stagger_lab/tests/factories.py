# stagger_lab/tests/factories.py

"""
Factories for panel rows, panels and simulation specs used across the tests.
"""

import factory
import numpy as np

from stagger_lab.constants import NEVER, Design
from stagger_lab.models import Panel, PanelRow
from stagger_lab.montecarlo import DgpSpec


class PanelRowFactory(factory.Factory):
    """One balanced, untreated-by-default record."""

    class Meta:
        model = PanelRow

    unit = factory.Sequence(lambda n: n + 1)
    time = 1
    outcome = factory.Faker("pyfloat", min_value=-5, max_value=5)
    cohort = NEVER


class DgpSpecFactory(factory.Factory):
    """Small MC81 design that simulates in milliseconds."""

    class Meta:
        model = DgpSpec

    design = Design.MC81_DGP1
    n = 400
    T = 12
    seed = factory.Sequence(lambda n: n)


class Mc84SpecFactory(DgpSpecFactory):
    design = Design.MC84_SMALL
    n = 400
    T = 8
    adoption_times = (5, NEVER)
    shares = (0.5, 0.5)
    t0 = 5


def rows_for_units(cohorts, T, outcome=lambda i, t: 0.0, first_period=1, **extra):
    """Balanced rows for units 1..n with the given calendar cohorts."""
    return [
        PanelRowFactory(
            unit=i + 1,
            time=first_period + t,
            outcome=outcome(i, t + 1),
            cohort=g,
            **extra,
        )
        for i, g in enumerate(cohorts)
        for t in range(T)
    ]


def make_panel(cohorts, T, outcome=None, covariates=None, exposure=None, observed=None):
    """
    Panel on the internal 1..T scale.

    ``outcome`` is a callable (i, t, g) -> y evaluated on every cell; the
    default is identically zero.
    """
    cohorts = np.asarray(cohorts, dtype=float)
    n = len(cohorts)
    Y = np.zeros((n, T))
    if outcome is not None:
        for i in range(n):
            for t in range(1, T + 1):
                Y[i, t - 1] = outcome(i, t, cohorts[i])
    if observed is not None:
        Y = np.where(observed, Y, np.nan)
    return Panel(outcomes=Y, cohorts=cohorts, covariates=covariates, exposure=exposure, observed=observed)


def additive_outcome(effect=lambda g, k: 0.0, unit_scale=0.3, time_scale=0.7):
    """y = alpha_i + lambda_t + tau(g, t - g) for treated cells."""
    def outcome(i, t, g):
        y = unit_scale * ((i % 7) - 3) + time_scale * np.sin(t)
        if np.isfinite(g) and t >= g:
            y += effect(int(g), int(t - g))
        return y
    return outcome


def staggered_cohorts(per_cohort=4, adoption=(3, 5, NEVER)):
    return [g for g in adoption for _ in range(per_cohort)]
