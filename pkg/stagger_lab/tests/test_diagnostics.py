# stagger_lab/tests/test_diagnostics.py

"""
Tests for design-risk indices and the distortion association.
"""

from unittest import TestCase

import numpy as np

from stagger_lab.constants import NEVER
from stagger_lab.diagnostics import diagnostics_report, distortion_association, risk_indices
from stagger_lab.exceptions import DegenerateVariance, ValidationError
from stagger_lab.models import EventWindow
from stagger_lab.twfe import WeightDecomposition, coefficient_weights, twfe_projection

from .factories import make_panel


def decomposition(weights, target=0):
    return WeightDecomposition(target, np.zeros(1), weights, {}, True)


# ============================================================================
# RISK INDEX TESTS
# ============================================================================

class RiskIndexTests(TestCase):
    """Test N, C, A and S on hand-built and estimated weights."""

    def test_convex_single_cohort(self):
        panel = make_panel([2, 2, NEVER, NEVER], T=2)
        indices = risk_indices(coefficient_weights(panel, EventWindow((-1, 0), -1), 0))
        self.assertAlmostEqual(indices.negative_mass, 0.0)
        self.assertAlmostEqual(indices.cross_horizon_mass, 0.0)
        self.assertAlmostEqual(indices.absolute_mass, 1.0)
        self.assertAlmostEqual(indices.signed_mass, 1.0)

    def test_arithmetic_on_signed_weights(self):
        """Test N=0.3, C=0.3, A=1.6, S=1.0."""
        indices = risk_indices(decomposition({(2, 0): 1.3, (3, 1): -0.3}))
        self.assertAlmostEqual(indices.negative_mass, 0.3)
        self.assertAlmostEqual(indices.cross_horizon_mass, 0.3)
        self.assertAlmostEqual(indices.absolute_mass, 1.6)
        self.assertAlmostEqual(indices.signed_mass, 1.0)
        self.assertAlmostEqual(indices.excess_mass, 0.6)

    def test_excess_mass_is_twice_negative_mass(self):
        """Test A(k) - 1 = 2 N(k) when the weights sum to one."""
        rng = np.random.default_rng(8)
        for _ in range(20):
            cohorts = rng.choice([2, 3, 4, 5, NEVER], size=15)
            cohorts[:2] = [2, NEVER]
            panel = make_panel(cohorts, T=6)
            window = EventWindow.full(panel)
            projection = twfe_projection(panel, window)
            for k in [k for k in projection.retained if k >= 0]:
                indices = risk_indices(coefficient_weights(panel, window, k, projection))
                self.assertAlmostEqual(indices.excess_mass, 2 * indices.negative_mass, places=8)

    def test_empty_weights(self):
        indices = risk_indices(decomposition({}))
        self.assertEqual(indices.absolute_mass, 0.0)


class DiagnosticsReportTests(TestCase):
    """Test the per-horizon report."""

    def test_dropped_horizon_flagged(self):
        panel = make_panel([3, 3, NEVER], T=4)
        report = diagnostics_report(panel, EventWindow.between(-2, 5), [0, 5])
        self.assertTrue(report.row(0).identified)
        self.assertFalse(report.row(5).identified)
        frame = report.to_frame()
        self.assertEqual(list(frame["identified_flag"]), [1, 0])

    def test_missing_row_raises_key_error(self):
        panel = make_panel([2, NEVER], T=3)
        report = diagnostics_report(panel, EventWindow.full(panel), [0])
        with self.assertRaises(KeyError):
            report.row(4)


# ============================================================================
# DISTORTION ASSOCIATION TESTS
# ============================================================================

class DistortionAssociationTests(TestCase):
    """Test correlations and the joint regression."""

    def test_perfect_cross_horizon_association(self):
        rng = np.random.default_rng(9)
        negative, cross = rng.random(30), rng.random(30)
        association = distortion_association(list(zip(negative, cross, 2 * cross)))
        self.assertAlmostEqual(association.corr_cross, 1.0)
        self.assertAlmostEqual(association.slope_cross, 2.0)
        self.assertAlmostEqual(association.slope_negative, 0.0, places=8)

    def test_constant_distortion_is_degenerate(self):
        rng = np.random.default_rng(10)
        association = distortion_association([(a, b, 0.0) for a, b in rng.random((10, 2))])
        self.assertTrue(association.degenerate)
        self.assertEqual((association.corr_negative, association.corr_cross), (0.0, 0.0))

    def test_constant_index_raises(self):
        with self.assertRaises(DegenerateVariance):
            distortion_association([(0.1, c, c) for c in (0.1, 0.2, 0.3, 0.4)])

    def test_too_few_replications(self):
        with self.assertRaises(ValidationError):
            distortion_association([(0.1, 0.2, 0.3), (0.2, 0.3, 0.4)])
