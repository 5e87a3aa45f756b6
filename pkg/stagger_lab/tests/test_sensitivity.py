# stagger_lab/tests/test_sensitivity.py

"""
Tests for restriction classes, identified sets, robust intervals,
calibration, holdout selection, breakdown frontiers, admissibility regions
and grid selection.
"""

import math
from unittest import TestCase

from stagger_lab.constants import RestrictionKind
from stagger_lab.exceptions import (
    EmptyGrid,
    MissingBaseline,
    NoFeasibleB,
    TooFewPrePeriods,
    Unbounded,
    ValidationError,
)
from stagger_lab.sensitivity import (
    KAPPA_B_GRID,
    DeviationMap,
    RestrictionClass,
    bias_bound,
    breakdown_frontier,
    calibrate,
    critical_value,
    dimensionless_breakdown,
    empirical_grid,
    frontier_frame,
    holdout_B,
    identified_set,
    is_down_set,
    region_frame,
    robust_interval,
    select_restriction,
    sensitivity_region,
)


# ============================================================================
# RESTRICTION CLASS TESTS
# ============================================================================

class RestrictionClassTests(TestCase):
    """Test parameter validation and nesting."""

    def test_negative_bound_rejected(self):
        with self.assertRaises(ValidationError):
            RestrictionClass(B=-0.1)

    def test_t0_below_two_rejected(self):
        with self.assertRaises(ValidationError):
            RestrictionClass(t0=1)

    def test_nesting_is_coordinatewise(self):
        large = RestrictionClass(B=1.0, Gamma=0.1, DeltaR=0.5)
        small = RestrictionClass(B=0.5, Gamma=0.1, DeltaR=0.0)
        self.assertTrue(large.contains(small))
        self.assertFalse(small.contains(large))

    def test_deviation_map_from_weights(self):
        mapping = DeviationMap.from_weights({3: 0.4, 5: 0.6}, 1)
        self.assertEqual(mapping.coefficients, {(3, 4): 0.4, (5, 6): 0.6})
        with self.assertRaises(ValidationError):
            DeviationMap({})


# ============================================================================
# IDENTIFIED SET TESTS
# ============================================================================

class IdentifiedSetTests(TestCase):
    """Test the two linear programs behind the bounds."""

    def test_zero_restriction_is_a_point(self):
        bounds = identified_set(0.7, DeviationMap({(3, 4): 1.0}), RestrictionClass())
        self.assertAlmostEqual(bounds.lower, 0.7)
        self.assertAlmostEqual(bounds.upper, 0.7)
        self.assertAlmostEqual(bounds.length, 0.0)

    def test_level_bound_on_single_cell(self):
        rc = RestrictionClass(RestrictionKind.BIAS_BOUND_SCALAR, B=0.2)
        bounds = identified_set(1.0, DeviationMap({(2, 2): 1.0}), rc)
        self.assertAlmostEqual(bounds.lower, 0.8)
        self.assertAlmostEqual(bounds.upper, 1.2)

    def test_curvature_bounds_match_vertex_enumeration(self):
        """Test T=4 curvature class with Gamma=0.1 and B=0 gives +/- 3 Gamma."""
        rc = RestrictionClass(Gamma=0.1)
        bounds = identified_set(0.0, DeviationMap({(3, 4): 1.0}), rc)
        extremes = [
            d3 + (2 * d3 + s4 * 0.1)
            for d3 in (-0.1, 0.1)
            for s4 in (-1, 1)
        ]
        self.assertAlmostEqual(bounds.upper, max(extremes))
        self.assertAlmostEqual(bounds.lower, min(extremes))
        self.assertAlmostEqual(bounds.upper_path[(3, 4)], 0.3)

    def test_bounds_widen_with_relaxation(self):
        mapping = DeviationMap({(3, 3): 0.5, (4, 4): 0.5})
        narrow = identified_set(0.0, mapping, RestrictionClass(B=0.1, Gamma=0.05))
        wide = identified_set(0.0, mapping, RestrictionClass(B=0.1, Gamma=0.05, DeltaR=1.0))
        self.assertLessEqual(wide.lower, narrow.lower)
        self.assertGreaterEqual(wide.upper, narrow.upper)
        self.assertTrue(wide.contains(0.0))

    def test_cohort_without_anchor_is_unbounded(self):
        with self.assertRaises(Unbounded):
            identified_set(0.0, DeviationMap({(1, 1): 1.0}), RestrictionClass(Gamma=0.1))


# ============================================================================
# BIAS BOUND / ROBUST INTERVAL TESTS
# ============================================================================

class BiasBoundTests(TestCase):
    """Test the scalar bias bound and robust intervals."""

    def test_bias_bound_arithmetic(self):
        self.assertAlmostEqual(bias_bound(0.5, 0.1, 0.25, 5), 0.925)
        self.assertEqual(bias_bound(0, 0, 0, 5), 0.0)
        self.assertEqual(bias_bound(1, 0, 0, 5), 1.0)

    def test_bias_bound_rejects_negative(self):
        with self.assertRaises(ValidationError):
            bias_bound(-1, 0, 0, 5)

    def test_zero_bound_is_wald(self):
        lower, upper = robust_interval(1.0, 0.1, 0.0)
        self.assertAlmostEqual(lower, 1.0 - 0.196)
        self.assertAlmostEqual(upper, 1.0 + 0.196)

    def test_robust_interval_widening(self):
        lower, upper = robust_interval(1.0, 0.1, 0.925)
        self.assertAlmostEqual(lower, 1.0 - 1.121)
        self.assertAlmostEqual(upper, 1.0 + 1.121)

    def test_zero_se_matches_level_bound_set(self):
        rc = RestrictionClass(RestrictionKind.BIAS_BOUND_SCALAR, B=0.3)
        bounds = identified_set(2.0, DeviationMap({(2, 2): 1.0}), rc)
        lower, upper = robust_interval(2.0, 0.0, 0.3)
        self.assertAlmostEqual(lower, bounds.lower)
        self.assertAlmostEqual(upper, bounds.upper)

    def test_critical_values(self):
        self.assertEqual(critical_value(), 1.96)
        self.assertAlmostEqual(critical_value(0.10), 1.6448536, places=6)


# ============================================================================
# CALIBRATION / HOLDOUT TESTS
# ============================================================================

class CalibrationTests(TestCase):
    """Test pre-period anchoring."""

    def test_reference_arithmetic(self):
        output = calibrate({-4: (0.01, 0.01), -3: (-0.03, 0.01), -2: (0.02, 0.01)}, 1.0)
        self.assertAlmostEqual(output.A_pre, 0.03)
        self.assertAlmostEqual(output.M_pre, 3.0)
        self.assertAlmostEqual(output.drift, 0.05)
        self.assertAlmostEqual(output.B_hat, 0.03)
        self.assertAlmostEqual(output.DeltaR_hat, 0.015)
        self.assertAlmostEqual(output.Gamma_hat, 5.0, places=4)
        self.assertEqual(len(output.trace), 3)

    def test_flat_pre_period(self):
        output = calibrate({-3: (0.0, 0.1), -2: (0.0, 0.1)}, 0.5)
        self.assertEqual((output.A_pre, output.M_pre, output.B_hat, output.Gamma_hat), (0.0, 0.0, 0.0, 0.0))

    def test_grids_reported(self):
        output = calibrate({-3: (0.1, 0.1), -2: (0.0, 0.1)}, 1.0)
        self.assertEqual(output.grids["kappa_B"], KAPPA_B_GRID)
        self.assertEqual(KAPPA_B_GRID, (0.0, 0.25, 0.5, 1.0, 2.0))

    def test_single_pre_period_rejected(self):
        with self.assertRaises(TooFewPrePeriods):
            calibrate({-2: (0.1, 0.1)}, 1.0)

    def test_nonpositive_se_rejected(self):
        with self.assertRaises(ValidationError):
            calibrate({-3: (0.1, 0.0), -2: (0.0, 0.1)}, 1.0)


class HoldoutTests(TestCase):
    """Test the holdout rule for B."""

    grid = (0.0, 0.02, 0.04, 0.06, 0.08, 0.10)

    def test_already_feasible_at_zero(self):
        result = holdout_B([0.05], lambda b: [0.01], self.grid)
        self.assertEqual(result.b, 0.0)
        self.assertTrue(result.feasible)

    def test_first_crossing(self):
        result = holdout_B([0.04], lambda b: [max(0.0, 0.1 - b)], self.grid)
        self.assertEqual(result.b, 0.06)
        self.assertTrue(result.monotone)

    def test_nonmonotone_flagged(self):
        values = {0.0: 0.2, 0.02: 0.03, 0.04: 0.3, 0.06: 0.01, 0.08: 0.01, 0.10: 0.01}
        result = holdout_B([0.04], lambda b: [values[b]], self.grid)
        self.assertFalse(result.monotone)
        self.assertEqual(result.b, 0.02)

    def test_no_feasible_value(self):
        result = holdout_B([0.01], lambda b: [1.0], self.grid)
        self.assertFalse(result.feasible)
        self.assertEqual(result.b, 0.10)
        with self.assertRaises(NoFeasibleB):
            holdout_B([0.01], lambda b: [1.0], self.grid, strict=True)


# ============================================================================
# BREAKDOWN FRONTIER TESTS
# ============================================================================

class BreakdownFrontierTests(TestCase):
    """Test interval and monitored frontier modes."""

    gammas = (0.0, 0.05, 0.10, 0.15)

    def test_interval_never_covers_zero_caps(self):
        point = breakdown_frontier(lambda B, G, D: (0.5, 1.5), 0.0, 0.0, self.gammas)
        self.assertEqual(point.Gamma_star, 0.15)
        self.assertTrue(point.capped)

    def test_interval_first_cover(self):
        point = breakdown_frontier(lambda B, G, D: (0.12 - G, 1.0), 0.0, 0.0, self.gammas)
        self.assertEqual(point.Gamma_star, 0.15)
        self.assertFalse(point.capped)

    def test_monitored_interpolation(self):
        rates = {0.0: 0.033, 0.05: 0.067, 0.10: 0.240, 0.15: 0.5}
        point = breakdown_frontier(None, 0.0, 0.0, self.gammas, monitor_fn=lambda B, G, D: rates[G], threshold=0.10)
        self.assertAlmostEqual(point.Gamma_star, 0.0595, places=4)

    def test_monitored_crossing_on_grid_point(self):
        rates = {0.0: 0.02, 0.05: 0.10, 0.10: 0.3, 0.15: 0.5}
        point = breakdown_frontier(None, 0.0, 0.0, self.gammas, monitor_fn=lambda B, G, D: rates[G], threshold=0.10)
        self.assertEqual(point.Gamma_star, 0.05)

    def test_needs_a_function(self):
        with self.assertRaises(ValidationError):
            breakdown_frontier(None, 0.0, 0.0, self.gammas)

    def test_frontier_frame_and_scaling(self):
        frame = frontier_frame([breakdown_frontier(lambda B, G, D: (1, 2), 0.5, 0.0, self.gammas)])
        self.assertEqual(list(frame.columns), ["B", "DeltaR", "Gamma_star", "capped_flag"])
        self.assertAlmostEqual(dimensionless_breakdown(0.1, 0.5), 0.2)
        self.assertTrue(math.isnan(dimensionless_breakdown(0.1, 0.0)))


# ============================================================================
# REGION / GRID SELECTION TESTS
# ============================================================================

class SensitivityRegionTests(TestCase):
    """Test admissibility and sign stability."""

    def test_admissibility_thresholds(self):
        region = sensitivity_region({
            (0, 0, 0): (0.95, 1.0),
            (0.5, 0, 0): (0.92, 2.0),
            (1.0, 0, 0): (0.89, 2.0),
            (1.0, 0.1, 0): (0.95, 2.6),
        })
        self.assertTrue(region[(0.5, 0.0, 0.0)].admissible)
        self.assertFalse(region[(1.0, 0.0, 0.0)].admissible)
        self.assertFalse(region[(1.0, 0.1, 0.0)].admissible)

    def test_bias_bound_region_is_down_set(self):
        theta, se = 1.0, 0.1
        results = {}
        for b in (0.0, 0.5, 1.0):
            for gamma in (0.0, 0.05, 0.1):
                for delta in (0.0, 0.25):
                    interval = robust_interval(theta, se, bias_bound(b, gamma, delta, 5))
                    results[(b, gamma, delta)] = (None, interval[1] - interval[0], interval)
        region = sensitivity_region(results)
        self.assertTrue(is_down_set(region))
        self.assertTrue(region[(0.0, 0.0, 0.0)].sign_stable)
        frame = region_frame(region)
        self.assertEqual(len(frame), 18)

    def test_missing_baseline(self):
        with self.assertRaises(MissingBaseline):
            sensitivity_region({(0.5, 0, 0): (0.9, 1.0)})

    def test_down_set_violation_detected(self):
        self.assertFalse(is_down_set({(0, 0, 0): False, (1, 0, 0): True}))

    def test_empirical_grid(self):
        grid = empirical_grid(2.0, 0.5, 0.1)
        self.assertEqual(grid.B, (2.0, 4.0))
        self.assertEqual(grid.Gamma[-1], 1.0)
        self.assertEqual(grid.cells()[0], (0.0, 0.0, 0.0))

    def test_select_smallest_feasible_triple(self):
        candidates = {
            (0.0, 0.0, 0.0): (0.30, 0.0),
            (1.0, 0.0, 0.0): (0.06, 0.0),
            (0.0, 0.1, 0.0): (0.05, 0.0),
            (1.0, 0.1, 0.5): (0.01, 0.0),
        }
        result = select_restriction(candidates)
        self.assertEqual(result.triple, (0.0, 0.1, 0.0))
        self.assertEqual(len(result.feasible), 2)

    def test_select_without_candidates(self):
        with self.assertRaises(EmptyGrid):
            select_restriction({})
        with self.assertRaises(NoFeasibleB):
            select_restriction({(0.0, 0.0, 0.0): (0.5, 0.0)})
