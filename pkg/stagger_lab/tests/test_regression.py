# stagger_lab/tests/test_regression.py

"""
Tests for the numerical kernel: least squares, two-way demeaning, logistic
fits and the simplex solver.
"""

from unittest import TestCase

import numpy as np
from scipy.optimize import linprog

from stagger_lab.constants import ConstraintSense, OptimizationSense
from stagger_lab.exceptions import (
    EmptyDesign,
    Infeasible,
    SingleClass,
    Unbounded,
    ValidationError,
)
from stagger_lab.regression import (
    LinearConstraint,
    LpProblem,
    fit_additive_effects,
    fit_logit,
    fit_multinomial,
    least_squares,
    logit_probabilities,
    solve_lp,
    twoway_demean,
)


def dummy_projection(n, T, values):
    """Explicit M_X v with a full unit and period dummy design."""
    units = np.kron(np.eye(n), np.ones((T, 1)))
    periods = np.kron(np.ones((n, 1)), np.eye(T))
    X = np.hstack([units, periods[:, 1:]])
    v = values.reshape(-1)
    return (v - X @ np.linalg.lstsq(X, v, rcond=None)[0]).reshape(n, T)


# ============================================================================
# LEAST SQUARES TESTS
# ============================================================================

class LeastSquaresTests(TestCase):
    """Test pivoted-QR least squares."""

    def test_identity_design(self):
        result = least_squares(np.eye(3), [1.0, 2.0, 3.0])
        np.testing.assert_allclose(result.coefficients, [1.0, 2.0, 3.0])
        self.assertEqual(result.rank, 3)
        self.assertEqual(result.dropped, ())

    def test_duplicated_column_dropped(self):
        """Test one of two identical columns is dropped without moving the fit."""
        rng = np.random.default_rng(0)
        X = rng.standard_normal((30, 2))
        y = rng.standard_normal(30)
        full = least_squares(X, y)
        duplicated = least_squares(np.column_stack([X, X[:, 0]]), y)
        self.assertEqual(len(duplicated.dropped), 1)
        self.assertEqual(duplicated.rank, 2)
        np.testing.assert_allclose(duplicated.fitted, full.fitted, atol=1e-10)

    def test_matches_normal_equations(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((50, 4))
        y = rng.standard_normal(50)
        oracle = np.linalg.inv(X.T @ X) @ X.T @ y
        np.testing.assert_allclose(least_squares(X, y).coefficients, oracle, atol=1e-10)

    def test_multiple_right_hand_sides(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((20, 3))
        Y = rng.standard_normal((20, 2))
        result = least_squares(X, Y)
        self.assertEqual(result.coefficients.shape, (3, 2))

    def test_empty_design_raises(self):
        with self.assertRaises(EmptyDesign):
            least_squares(np.zeros((0, 2)), np.zeros(0))

    def test_row_mismatch_raises(self):
        with self.assertRaises(ValidationError):
            least_squares(np.eye(3), [1.0, 2.0])


# ============================================================================
# TWO-WAY DEMEANING TESTS
# ============================================================================

class TwowayDemeanTests(TestCase):
    """Test residualisation on unit and period effects."""

    def test_additive_values_vanish(self):
        a = np.array([1.0, -2.0, 0.5, 3.0])
        b = np.array([0.2, 0.7, -1.1])
        np.testing.assert_allclose(twoway_demean(a[:, None] + b[None, :]), 0.0, atol=1e-10)

    def test_matches_explicit_projection(self):
        values = np.array([[1.0, 4.0, 2.0], [0.5, -1.0, 3.0], [2.0, 2.5, -0.5]])
        np.testing.assert_allclose(twoway_demean(values), dummy_projection(3, 3, values), atol=1e-9)

    def test_constant_matrix_vanishes(self):
        np.testing.assert_allclose(twoway_demean(np.full((4, 5), 3.0)), 0.0, atol=1e-12)

    def test_stacked_columns(self):
        rng = np.random.default_rng(3)
        values = rng.standard_normal((5, 4, 2))
        stacked = twoway_demean(values)
        np.testing.assert_allclose(stacked[:, :, 1], twoway_demean(values[:, :, 1]), atol=1e-10)

    def test_masked_cells_zero(self):
        mask = np.ones((3, 3), dtype=bool)
        mask[0, 2] = False
        result = twoway_demean(np.arange(9.0).reshape(3, 3) ** 2, mask)
        self.assertEqual(result[0, 2], 0.0)

    def test_unit_without_observations_rejected(self):
        mask = np.ones((2, 3), dtype=bool)
        mask[1] = False
        with self.assertRaises(ValidationError):
            twoway_demean(np.zeros((2, 3)), mask)

    def test_additive_fit_predicts_off_mask(self):
        """Test masked additive fit recovers a held-out cell."""
        a = np.array([0.0, 1.0, 2.0])
        b = np.array([0.0, 0.5, -0.5, 1.5])
        values = a[:, None] + b[None, :]
        mask = np.ones_like(values, dtype=bool)
        mask[2, 3] = False
        fit = fit_additive_effects(values, mask)
        self.assertAlmostEqual(fit.predict()[2, 3], values[2, 3], places=8)


# ============================================================================
# LOGISTIC FIT TESTS
# ============================================================================

class LogitTests(TestCase):
    """Test ridge-penalised Newton-IRLS."""

    def test_balanced_intercept_is_zero(self):
        coef = fit_logit(np.ones((10, 1)), [0, 1] * 5)
        self.assertAlmostEqual(coef[0], 0.0, places=6)

    def test_separated_data_stays_finite(self):
        """Test the ridge keeps separated coefficients finite."""
        x = np.array([-2.0, -1.0, 1.0, 2.0])
        coef = fit_logit(x, [0, 0, 1, 1], ridge=1e-2)
        self.assertTrue(np.all(np.isfinite(coef)))
        self.assertGreater(coef[0], 0)

    def test_recovers_generating_coefficients(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal(200)
        features = np.column_stack([np.ones(200), x])
        labels = (rng.random(200) < 1.0 / (1.0 + np.exp(-(0.5 + x)))).astype(float)
        coef = fit_logit(features, labels)
        p = logit_probabilities(features, coef)
        covariance = np.linalg.inv((features * (p * (1 - p))[:, None]).T @ features)
        se = np.sqrt(np.diag(covariance))
        self.assertTrue(np.all(np.abs(coef - [0.5, 1.0]) < 3 * se))

    def test_single_class_raises(self):
        with self.assertRaises(SingleClass):
            fit_logit(np.ones((4, 1)), [1, 1, 1, 1])

    def test_non_binary_labels_rejected(self):
        with self.assertRaises(ValidationError):
            fit_logit(np.ones((3, 1)), [0, 1, 2])

    def test_multinomial_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        features = np.column_stack([np.ones(90), rng.standard_normal(90)])
        labels = np.repeat([1, 2, 3], 30)
        fit = fit_multinomial(features, labels)
        np.testing.assert_allclose(fit.predict_proba(features).sum(axis=1), 1.0)
        self.assertEqual(fit.classes, (1, 2, 3))


# ============================================================================
# LINEAR PROGRAM TESTS
# ============================================================================

class LinearProgramTests(TestCase):
    """Test the two-phase simplex solver."""

    def test_box_maximum(self):
        problem = LpProblem((1.0,), bounds=((0.0, 2.0),), sense=OptimizationSense.MAX)
        self.assertAlmostEqual(solve_lp(problem).value, 2.0)

    def test_simplex_constraint(self):
        problem = LpProblem(
            (1.0, 1.0),
            constraints=(LinearConstraint((1.0, 1.0), ConstraintSense.LE, 1.0),),
            sense="max",
        )
        self.assertAlmostEqual(solve_lp(problem).value, 1.0)

    def test_free_variables_and_equalities(self):
        problem = LpProblem(
            (1.0, -1.0),
            bounds=((-np.inf, np.inf), (-np.inf, 3.0)),
            constraints=(((1.0, 1.0), "==", 2.0), ((1.0, 0.0), ">=", -4.0)),
        )
        solution = solve_lp(problem)
        self.assertAlmostEqual(solution.value, -4.0)
        np.testing.assert_allclose(solution.x, [-1.0, 3.0], atol=1e-9)

    def test_matches_reference_solver(self):
        """Test random box-plus-constraint instances against scipy's HiGHS."""
        rng = np.random.default_rng(6)
        for _ in range(5):
            c = rng.standard_normal(6)
            A = rng.standard_normal((3, 6))
            b = rng.uniform(0.5, 2.0, 3)
            bounds = [(-1.0, 1.0)] * 6
            reference = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
            problem = LpProblem(
                tuple(c),
                bounds=tuple(bounds),
                constraints=tuple(LinearConstraint(tuple(row), ConstraintSense.LE, rhs) for row, rhs in zip(A, b)),
            )
            self.assertAlmostEqual(solve_lp(problem).value, reference.fun, places=7)

    def test_infeasible(self):
        problem = LpProblem(
            (1.0,),
            constraints=(((1.0,), "<=", -1.0),),
        )
        with self.assertRaises(Infeasible):
            solve_lp(problem)

    def test_unbounded(self):
        with self.assertRaises(Unbounded):
            solve_lp(LpProblem((1.0,), sense="max"))

    def test_empty_bound_interval_infeasible(self):
        with self.assertRaises(Infeasible):
            LpProblem((1.0,), bounds=((1.0, 0.0),))
