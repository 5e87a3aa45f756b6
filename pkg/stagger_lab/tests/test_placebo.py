# stagger_lab/tests/test_placebo.py

"""
Tests for the means-contrast and pooled Wald placebo tests.
"""

from unittest import TestCase

import numpy as np
import pytest

from stagger_lab.constants import NEVER, PLACEBO_ALPHAS, PlaceboVariant
from stagger_lab.exceptions import EmptyControlSet, InsufficientPrePeriods
from stagger_lab.montecarlo import placebo_rates, placebo_test, simulate
from stagger_lab.montecarlo.placebo import placebo_grid
from stagger_lab.utils import replication_rng

from .factories import DgpSpecFactory, Mc84SpecFactory, make_panel


# ============================================================================
# MEANS PLACEBO TESTS
# ============================================================================

class MeansPlaceboTests(TestCase):
    """Test the two-arm means contrast."""

    def test_drift_is_detected(self):
        panel = simulate(Mc84SpecFactory(DeltaR=0.5, Gamma=1.5, seed=3))
        result = placebo_test(panel, "mc84-means")
        self.assertEqual(result.variant, PlaceboVariant.MC84_MEANS)
        self.assertAlmostEqual(result.statistic, 1.5, delta=0.4)
        self.assertTrue(all(result.rejections.values()))
        self.assertTrue(result.rejects())

    def test_rejection_levels(self):
        panel = simulate(Mc84SpecFactory(seed=4))
        result = placebo_test(panel, PlaceboVariant.MC84_MEANS)
        self.assertEqual(set(result.rejections), set(PLACEBO_ALPHAS))
        self.assertGreater(result.se, 0.0)

    def test_early_adoption_rejected(self):
        panel = make_panel([3, 3, NEVER, NEVER], T=6)
        with self.assertRaises(InsufficientPrePeriods):
            placebo_test(panel, PlaceboVariant.MC84_MEANS)


# ============================================================================
# WALD PLACEBO TESTS
# ============================================================================

class WaldPlaceboTests(TestCase):
    """Test the pooled short-difference Wald test."""

    def test_components_and_df(self):
        result = placebo_test(simulate(DgpSpecFactory(seed=5)), PlaceboVariant.MC81_WALD)
        self.assertEqual(set(result.components), {-3, -2, -1})
        self.assertEqual(result.df, 3)
        self.assertTrue(0.0 <= result.p_value <= 1.0)

    def test_pre_trend_is_detected(self):
        spec = DgpSpecFactory(DeltaR=1.0, B=5.0, noise_scale=0.2, seed=6)
        result = placebo_test(simulate(spec), "mc81-wald", weights={8: 1.0})
        for ell in (-3, -2, -1):
            self.assertAlmostEqual(result.components[ell], 5.0 / 11, delta=0.2)
        self.assertTrue(result.rejects(0.01))

    def test_needs_never_treated(self):
        panel = make_panel([3, 3, 4, 4], T=6, outcome=lambda i, t, g: float(i * t))
        with self.assertRaises(EmptyControlSet):
            placebo_test(panel, PlaceboVariant.MC81_WALD)

    @pytest.mark.slow
    def test_null_size(self):
        """Test rejection frequency near the nominal level without violations."""
        spec = DgpSpecFactory(seed=0)
        results = [
            placebo_test(simulate(spec, replication_rng(17, r)), PlaceboVariant.MC81_WALD)
            for r in range(300)
        ]
        rates = placebo_rates(results)
        self.assertTrue(0.01 <= rates[0.05] <= 0.10)


# ============================================================================
# RATE TESTS
# ============================================================================

class PlaceboRateTests(TestCase):
    """Test rejection-rate bookkeeping."""

    def test_empty_rates_are_nan(self):
        self.assertTrue(all(np.isnan(v) for v in placebo_rates([]).values()))

    def test_rates_average_decisions(self):
        panels = [simulate(Mc84SpecFactory(seed=s)) for s in (1, 2)]
        results = [placebo_test(p, "mc84-means") for p in panels]
        rates = placebo_rates(results, alphas=(0.05,))
        expected = np.mean([r.rejects(0.05) for r in results])
        self.assertEqual(rates, {0.05: expected})

    def test_grid_regrouping(self):
        table = placebo_grid({(0.0, 0.0): 0.05, (0.0, 0.1): 0.2, (0.5, 0.0): 0.07})
        self.assertEqual(table, {0.0: {0.0: 0.05, 0.1: 0.2}, 0.5: {0.0: 0.07}})
