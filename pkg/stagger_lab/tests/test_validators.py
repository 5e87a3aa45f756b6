# stagger_lab/tests/test_validators.py

"""
Tests for argument validators.
"""

import math
from unittest import TestCase

import numpy as np

from stagger_lab.exceptions import EmptyGrid, ValidationError
from stagger_lab.validators import (
    validate_exposure,
    validate_finite_matrix,
    validate_grid,
    validate_nonnegative,
    validate_positive,
    validate_probability,
)


# ============================================================================
# SCALAR VALIDATOR TESTS
# ============================================================================

class ValidateNonnegativeTest(TestCase):
    """Tests for validate_nonnegative."""

    def test_zero_and_positive_pass(self):
        self.assertEqual(validate_nonnegative(0), 0.0)
        self.assertEqual(validate_nonnegative(np.float64(2.5)), 2.5)

    def test_negative_rejected(self):
        """Test a negative value raises ValidationError."""
        with self.assertRaises(ValidationError) as cm:
            validate_nonnegative(-0.1, "B")
        self.assertIn("B", str(cm.exception))

    def test_non_finite_rejected(self):
        for value in (math.inf, math.nan):
            with self.assertRaises(ValidationError):
                validate_nonnegative(value)

    def test_bool_and_string_rejected(self):
        """Test non-numeric types are rejected."""
        with self.assertRaises(ValidationError):
            validate_nonnegative(True)
        with self.assertRaises(ValidationError):
            validate_nonnegative("1")


class ValidatePositiveAndProbabilityTest(TestCase):
    """Tests for validate_positive and validate_probability."""

    def test_positive_rejects_zero(self):
        with self.assertRaises(ValidationError):
            validate_positive(0.0)

    def test_probability_range(self):
        self.assertEqual(validate_probability(0.05), 0.05)
        for value in (0.0, 1.0, 1.5):
            with self.assertRaises(ValidationError):
                validate_probability(value)


# ============================================================================
# GRID / ARRAY VALIDATOR TESTS
# ============================================================================

class ValidateGridTest(TestCase):
    """Tests for validate_grid."""

    def test_valid_grid_returns_floats(self):
        self.assertEqual(validate_grid([0, 0.05, 0.1]), [0.0, 0.05, 0.1])

    def test_empty_grid_raises_empty_grid(self):
        """Test an empty grid raises EmptyGrid."""
        with self.assertRaises(EmptyGrid):
            validate_grid([])

    def test_unsorted_grid_rejected_when_ascending(self):
        validate_grid([0.1, 0.0])
        with self.assertRaises(ValidationError):
            validate_grid([0.1, 0.0], ascending=True)


class ValidateExposureTest(TestCase):
    """Tests for validate_exposure."""

    def test_valid_weights(self):
        np.testing.assert_array_equal(validate_exposure([1, 0, 2]), [1.0, 0.0, 2.0])

    def test_negative_weight_rejected(self):
        with self.assertRaises(ValidationError):
            validate_exposure([1, -1])

    def test_zero_sum_rejected(self):
        with self.assertRaises(ValidationError):
            validate_exposure([0, 0])

    def test_finite_matrix(self):
        with self.assertRaises(ValidationError):
            validate_finite_matrix([[1.0, np.nan]])
