# stagger_lab/tests/test_twfe.py

"""
Tests for the event-study regression, its coefficient map and the implicit
cohort-horizon weights.
"""

import tempfile
from pathlib import Path
from unittest import TestCase

import numpy as np
import pandas as pd

from stagger_lab.constants import NEVER, Design
from stagger_lab.exceptions import DroppedColumn, RankZeroDesign, ValidationError
from stagger_lab.models import EventWindow
from stagger_lab.montecarlo import DgpSpec, simulate
from stagger_lab.twfe import (
    build_event_design,
    coefficient_weights,
    twfe_event_coeffs,
    twfe_projection,
    write_weights_csv,
)

from .factories import additive_outcome, make_panel, staggered_cohorts


def dummy_ols(panel, window):
    """Event coefficients from an explicit unit, period and event dummy design."""
    n, T = panel.n, panel.T
    units = np.kron(np.eye(n), np.ones((T, 1)))
    periods = np.kron(np.ones((n, 1)), np.eye(T))[:, 1:]
    events = build_event_design(panel, window).matrix
    X = np.hstack([events, units, periods])
    coef = np.linalg.lstsq(X, panel.outcomes.reshape(-1), rcond=None)[0]
    return dict(zip(window.estimated, coef[: events.shape[1]]))


# ============================================================================
# EVENT DESIGN TESTS
# ============================================================================

class EventDesignTests(TestCase):
    """Test relative-time indicator construction."""

    def test_single_unit_columns(self):
        """Test columns k in {0, 1} light up at t=2 and t=3."""
        design = build_event_design(make_panel([2], T=3), EventWindow((-1, 0, 1), -1))
        self.assertEqual(design.column_order, (0, 1))
        np.testing.assert_array_equal(design.column(0), [0, 1, 0])
        np.testing.assert_array_equal(design.column(1), [0, 0, 1])

    def test_never_treated_panel_is_all_zero(self):
        design = build_event_design(make_panel([NEVER, NEVER], T=4), EventWindow.between(-2, 2))
        self.assertEqual(design.matrix.sum(), 0.0)

    def test_support_counts_cohort_sizes(self):
        """Test column support equals the cohort cells inside the panel."""
        panel = make_panel([4, 4, 6, 8, 10, NEVER], T=12)
        design = build_event_design(panel, EventWindow.between(-5, 5))
        expected = {
            k: sum(1 for g in (4, 4, 6, 8, 10) if 1 <= g + k <= 12)
            for k in EventWindow.between(-5, 5).estimated
        }
        self.assertEqual(design.support, expected)


# ============================================================================
# COEFFICIENT TESTS
# ============================================================================

class TwfeCoefficientTests(TestCase):
    """Test coefficients against known answers and an explicit OLS."""

    def test_canonical_two_by_two(self):
        """Test beta_0 = tau in the canonical DiD."""
        panel = make_panel([2, 2, NEVER, NEVER], T=2, outcome=additive_outcome(lambda g, k: 1.0))
        result = twfe_event_coeffs(panel, EventWindow((-1, 0), -1))
        self.assertAlmostEqual(result.coefficient(0), 1.0, places=10)

    def test_matches_explicit_dummy_regression(self):
        """Test beta = pi . Y equals the full dummy-variable OLS."""
        rng = np.random.default_rng(0)
        cohorts = staggered_cohorts(3, (3, 4, 6, NEVER))
        noise = rng.standard_normal((len(cohorts), 7))
        panel = make_panel(cohorts, T=7, outcome=lambda i, t, g: noise[i, t - 1] + 0.2 * t)
        window = EventWindow.full(panel)
        result = twfe_event_coeffs(panel, window)
        oracle = dummy_ols(panel, window)
        for k, b in result.coefficients.items():
            self.assertAlmostEqual(b, oracle[k], places=8)

    def test_standard_errors_positive_with_noise(self):
        panel = simulate(DgpSpec(n=300, seed=2))
        result = twfe_event_coeffs(panel, EventWindow.between(-3, 3))
        self.assertTrue(all(se > 0 for se in result.standard_errors.values()))
        self.assertEqual(list(result.to_frame().columns), ["k", "estimate", "se", "identified"])

    def test_combination_reduces_to_single_coefficient(self):
        panel = simulate(DgpSpec(n=300, seed=3))
        result = twfe_event_coeffs(panel, EventWindow.between(-3, 3))
        estimate, se = result.combination({1: 1.0})
        self.assertAlmostEqual(estimate, result.coefficients[1])
        self.assertAlmostEqual(se, result.standard_errors[1])

    def test_combination_averages(self):
        panel = simulate(DgpSpec(n=300, seed=4))
        result = twfe_event_coeffs(panel, EventWindow.between(-3, 3))
        estimate, se = result.combination({0: 0.5, 1: 0.5})
        self.assertAlmostEqual(estimate, 0.5 * (result.coefficients[0] + result.coefficients[1]))
        self.assertGreater(se, 0.0)

    def test_unsupported_horizon_dropped(self):
        """Test a horizon without support raises DroppedColumn on access."""
        panel = make_panel([3, 3, NEVER], T=4, outcome=additive_outcome())
        result = twfe_event_coeffs(panel, EventWindow.between(-2, 5))
        self.assertIn(5, result.dropped)
        with self.assertRaises(DroppedColumn):
            result.coefficient(5)
        with self.assertRaises(DroppedColumn):
            result.projection.pi_column(5)

    def test_single_cohort_without_controls_has_rank_zero(self):
        panel = make_panel([3, 3, 3], T=4, outcome=additive_outcome())
        with self.assertRaises(RankZeroDesign):
            twfe_projection(panel, EventWindow.full(panel))

    def test_heterogeneous_effects_contaminate(self):
        """Test confounded heterogeneous effects move beta_k off the cohort average."""
        spec = DgpSpec(
            design=Design.MC85_CONFOUNDED, n=400, T=6,
            adoption_times=(3, 4, 5, NEVER), shares=(0.25, 0.25, 0.25, 0.25), seed=5,
        )
        panel = simulate(spec)
        result = twfe_event_coeffs(panel, EventWindow.full(panel))
        gaps = []
        for k in (0, 1):
            cohorts = [g for g in panel.cohort_values if g + k <= panel.T]
            counts = np.array([np.sum(panel.cohorts == g) for g in cohorts], dtype=float)
            truth = float(np.dot(counts / counts.sum(), [spec.effect(g, k) for g in cohorts]))
            gaps.append(abs(result.coefficients[k] - truth))
        self.assertGreater(max(gaps), 1e-3)


# ============================================================================
# IMPLICIT WEIGHT TESTS
# ============================================================================

class CoefficientWeightTests(TestCase):
    """Test cohort-horizon weights against injected effects."""

    def test_single_cohort_weight_is_one(self):
        panel = make_panel([2, 2, NEVER, NEVER], T=2)
        decomposition = coefficient_weights(panel, EventWindow((-1, 0), -1), 0)
        self.assertAlmostEqual(decomposition.weights[(2, 0)], 1.0)
        self.assertAlmostEqual(decomposition.pre_weights[(2, -1)], 0.0)
        self.assertTrue(decomposition.normalized)

    def test_weights_match_injected_effects(self):
        """Test beta_k responds to a unit effect in cell (g, k') with w_{g,k'}(k)."""
        base = make_panel([2, 3, NEVER], T=4)
        window = EventWindow((-1, 0, 1), -1)
        projection = twfe_projection(base, window)
        for k in projection.retained:
            decomposition = coefficient_weights(base, window, k, projection)
            for (g, k_prime), w in decomposition.all_weights().items():
                Y = np.zeros((3, 4))
                Y[base.cohorts == g, g + k_prime - 1] = 1.0
                injected = twfe_event_coeffs(base.with_outcomes(Y), window, projection)
                self.assertAlmostEqual(injected.coefficient(k), w, places=10)
                self.assertAlmostEqual(dummy_ols(base.with_outcomes(Y), window)[k], w, places=8)

    def test_post_weights_sum_to_one_on_full_window(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            cohorts = rng.choice([2, 3, 4, 5, NEVER], size=20)
            cohorts[:2] = [3, NEVER]
            panel = make_panel(cohorts, T=6)
            window = EventWindow.full(panel)
            projection = twfe_projection(panel, window)
            for k in [k for k in projection.retained if k >= 0]:
                decomposition = coefficient_weights(panel, window, k, projection)
                self.assertAlmostEqual(decomposition.total, 1.0, places=8)

    def test_horizon_outside_window_rejected(self):
        panel = make_panel([2, NEVER], T=3)
        with self.assertRaises(ValidationError):
            coefficient_weights(panel, EventWindow((-1, 0), -1), 3)

    def test_weights_csv_uses_calendar_cohorts(self):
        panel = make_panel([2, 2, NEVER, NEVER], T=2)
        decomposition = coefficient_weights(panel, EventWindow((-1, 0), -1), 0)
        with tempfile.TemporaryDirectory() as tmp:
            path = write_weights_csv(panel, [decomposition], Path(tmp) / "weights.csv")
            frame = pd.read_csv(path)
        self.assertEqual(list(frame.columns), ["target_k", "g", "k_prime", "weight"])
        self.assertEqual(set(frame["g"]), {2})
