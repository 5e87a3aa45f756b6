# stagger_lab/regression.py

"""
Numerical kernel: least squares with drop-and-report collinearity handling,
two-way demeaning by alternating projections, logistic fits and a dense
bounded-variable simplex solver.

Everything here is a pure function of its inputs.
"""

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.linalg import qr, solve_triangular
from scipy.special import expit

from .conf import app_settings
from .constants import ConstraintSense, OptimizationSense
from .exceptions import (
    EmptyDesign,
    Infeasible,
    NoConvergence,
    SingleClass,
    Unbounded,
    ValidationError,
)

logger = logging.getLogger("stagger_lab")


# ====== LEAST SQUARES ======

@dataclass(frozen=True)
class LinearSystemResult:
    """
    Least-squares fit.

    ``coefficients`` is the basic solution on the retained columns; dropped
    columns carry a zero coefficient. Fitted values do not depend on which
    member of a collinear set was dropped.
    """

    coefficients: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray
    rank: int
    dropped: Tuple[int, ...]

    @property
    def retained(self) -> Tuple[int, ...]:
        dropped = set(self.dropped)
        return tuple(j for j in range(self.coefficients.shape[0]) if j not in dropped)


def pivoted_qr(matrix: np.ndarray, rtol: Optional[float] = None):
    """
    Economic QR with column pivoting.

    Returns (Q_r, R_r, keep, dropped) where ``keep`` lists the retained
    column indices in pivot order and Q_r, R_r are truncated to the rank.
    """
    rtol = app_settings.RANK_RTOL if rtol is None else rtol
    Q, R, piv = qr(matrix, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(diag > rtol * diag[0]))
    keep = piv[:rank]
    dropped = tuple(sorted(int(j) for j in piv[rank:]))
    return Q[:, :rank], R[:rank, :rank], keep, dropped


def least_squares(Xmat, y, rtol: Optional[float] = None) -> LinearSystemResult:
    """
    Solve min ||y - X b|| through a pivoted QR factorisation.

    Columns whose pivot falls below ``rtol`` times the leading pivot are
    dropped in pivot order (smallest pivot last) and reported.
    """
    X = np.asarray(Xmat, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise EmptyDesign(f"design has shape {X.shape}")
    if y.shape[0] != X.shape[0]:
        raise ValidationError(f"design has {X.shape[0]} rows but y has {y.shape[0]}")

    Q, R, keep, dropped = pivoted_qr(X, rtol)
    coefficients = np.zeros((X.shape[1],) + y.shape[1:])
    if keep.size:
        coefficients[keep] = solve_triangular(R, Q.T @ y)
    fitted = Q @ (Q.T @ y) if keep.size else np.zeros_like(y)
    result = LinearSystemResult(
        coefficients=coefficients,
        residuals=y - fitted,
        fitted=fitted,
        rank=int(keep.size),
        dropped=dropped,
    )
    if dropped:
        logger.debug(f"least_squares dropped collinear columns {list(dropped)}")
    return result


# ====== TWO-WAY DEMEANING ======

def _check_mask(mask: np.ndarray) -> None:
    if not mask.any(axis=1).all():
        raise ValidationError("mask has a unit without observed periods")
    if not mask.any(axis=0).all():
        raise ValidationError("mask has a period without observed units")


def twoway_demean(
    values,
    mask=None,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> np.ndarray:
    """
    Residualise on unit and period fixed effects over the masked cells.

    ``values`` is n x T or n x T x m (one slice per column). Unmasked cells
    are returned as zero so stacked inner products ignore them. Iteration
    stops when the sup-norm of the subtracted means falls below
    ``tol * max(1, sup |values|)``.
    """
    tol = app_settings.DEMEAN_TOL if tol is None else tol
    max_iter = app_settings.DEMEAN_MAX_ITER if max_iter is None else max_iter

    V = np.asarray(values, dtype=float)
    squeeze = V.ndim == 2
    if squeeze:
        V = V[:, :, None]
    n, T = V.shape[:2]
    mask = np.ones((n, T), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    _check_mask(mask)

    M = mask[:, :, None]
    V = np.where(M, V, 0.0)
    scale = max(1.0, float(np.max(np.abs(V))) if V.size else 1.0)
    row_counts = mask.sum(axis=1)[:, None]
    col_counts = mask.sum(axis=0)[:, None]

    for iteration in range(1, max_iter + 1):
        row_means = V.sum(axis=1) / row_counts
        V = np.where(M, V - row_means[:, None, :], 0.0)
        col_means = V.sum(axis=0) / col_counts
        V = np.where(M, V - col_means[None, :, :], 0.0)
        change = max(np.max(np.abs(row_means), initial=0.0), np.max(np.abs(col_means), initial=0.0))
        if change < tol * scale:
            break
    else:
        raise NoConvergence(
            f"two-way demeaning did not converge in {max_iter} iterations",
            details={"change": float(change)},
        )
    return V[:, :, 0] if squeeze else V


@dataclass(frozen=True)
class AdditiveFit:
    """Unit and period effects fitted on a masked sample."""

    unit_effects: np.ndarray
    time_effects: np.ndarray
    iterations: int

    def predict(self) -> np.ndarray:
        return self.unit_effects[:, None] + self.time_effects[None, :]


def fit_additive_effects(
    values,
    mask,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> AdditiveFit:
    """
    Fit Y_it = a_i + b_t on the masked cells by alternating updates.

    Effects are identified up to a common shift; predictions off the mask
    are unique when the masked cells form a connected design.
    """
    tol = app_settings.DEMEAN_TOL if tol is None else tol
    max_iter = app_settings.DEMEAN_MAX_ITER if max_iter is None else max_iter

    mask = np.asarray(mask, dtype=bool)
    _check_mask(mask)
    Y = np.where(mask, np.asarray(values, dtype=float), 0.0)
    scale = max(1.0, float(np.max(np.abs(Y))))
    row_counts = mask.sum(axis=1)
    col_counts = mask.sum(axis=0)

    a = np.zeros(Y.shape[0])
    b = np.zeros(Y.shape[1])
    for iteration in range(1, max_iter + 1):
        a_new = np.where(mask, Y - b[None, :], 0.0).sum(axis=1) / row_counts
        b_new = np.where(mask, Y - a_new[:, None], 0.0).sum(axis=0) / col_counts
        change = max(np.max(np.abs(a_new - a)), np.max(np.abs(b_new - b)))
        a, b = a_new, b_new
        if change < tol * scale:
            break
    else:
        raise NoConvergence(f"additive-effects fit did not converge in {max_iter} iterations")
    return AdditiveFit(unit_effects=a, time_effects=b, iterations=iteration)


# ====== LOGISTIC MODELS ======

def _logit_objective(X, y, coef, ridge):
    eta = X @ coef
    return float(np.sum(np.logaddexp(0.0, eta) - y * eta) + 0.5 * ridge * coef @ coef)


def fit_logit(
    features,
    labels,
    ridge: Optional[float] = None,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> np.ndarray:
    """
    Ridge-penalised logistic regression by Newton-IRLS.

    Minimises sum(log(1 + e^eta) - y*eta) + ridge/2 ||b||^2. Every step is
    halved until the objective does not increase.

    Args:
        features: n x p matrix (include a column of ones for an intercept)
        labels: 0/1 vector of length n
        ridge: penalty, default ``app_settings.LOGIT_RIDGE``

    Returns:
        Coefficient vector of length p
    """
    ridge = app_settings.LOGIT_RIDGE if ridge is None else ridge
    tol = app_settings.LOGIT_TOL if tol is None else tol
    max_iter = app_settings.LOGIT_MAX_ITER if max_iter is None else max_iter

    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels, dtype=float)
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise EmptyDesign(f"logit design has shape {X.shape}")
    if y.shape[0] != X.shape[0]:
        raise ValidationError("features and labels differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("labels must be 0/1")
    if y.min() == y.max():
        raise SingleClass(f"all {y.size} labels equal {int(y[0])}")

    coef = np.zeros(X.shape[1])
    objective = _logit_objective(X, y, coef, ridge)
    penalty = ridge * np.eye(X.shape[1])
    for iteration in range(max_iter):
        p = expit(X @ coef)
        gradient = X.T @ (p - y) + ridge * coef
        if np.max(np.abs(gradient)) < tol:
            return coef
        hessian = (X * (p * (1.0 - p))[:, None]).T @ X + penalty
        try:
            step = np.linalg.solve(hessian, gradient)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hessian, gradient, rcond=None)[0]

        scale = 1.0
        for _ in range(60):
            candidate = coef - scale * step
            value = _logit_objective(X, y, candidate, ridge)
            if value <= objective:
                break
            scale *= 0.5
        else:
            break
        coef, objective = candidate, value

    p = expit(X @ coef)
    gradient = X.T @ (p - y) + ridge * coef
    if np.max(np.abs(gradient)) < tol:
        return coef
    raise NoConvergence(
        f"logit did not converge in {max_iter} iterations",
        details={"gradient_norm": float(np.max(np.abs(gradient)))},
    )


def logit_probabilities(features, coef) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return expit(X @ np.asarray(coef, dtype=float))


@dataclass(frozen=True)
class MultinomialFit:
    """One-vs-rest logits, renormalised to sum to one per row."""

    classes: Tuple
    coefficients: np.ndarray

    def predict_proba(self, features) -> np.ndarray:
        X = np.asarray(features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        raw = expit(X @ self.coefficients.T)
        return raw / raw.sum(axis=1, keepdims=True)


def fit_multinomial(features, labels, ridge: Optional[float] = None) -> MultinomialFit:
    labels = np.asarray(labels)
    classes = tuple(np.unique(labels).tolist())
    if len(classes) < 2:
        raise SingleClass(f"multinomial fit needs two classes, got {classes}")
    coefficients = np.vstack(
        [fit_logit(features, (labels == c).astype(float), ridge=ridge) for c in classes]
    )
    return MultinomialFit(classes=classes, coefficients=coefficients)


# ====== LINEAR PROGRAMMING ======

@dataclass(frozen=True)
class LinearConstraint:
    coefficients: Tuple[float, ...]
    sense: ConstraintSense
    rhs: float


@dataclass(frozen=True)
class LpProblem:
    """
    Linear program over bounded variables.

    ``bounds`` holds one (lo, hi) pair per variable; either side may be
    infinite. Defaults to x >= 0.
    """

    objective: Tuple[float, ...]
    bounds: Tuple[Tuple[float, float], ...] = None
    constraints: Tuple[LinearConstraint, ...] = ()
    sense: OptimizationSense = OptimizationSense.MIN

    def __post_init__(self):
        objective = tuple(float(c) for c in self.objective)
        p = len(objective)
        if p == 0:
            raise EmptyDesign("linear program has no variables")
        bounds = self.bounds
        if bounds is None:
            bounds = tuple((0.0, np.inf) for _ in range(p))
        bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        if len(bounds) != p:
            raise ValidationError(f"expected {p} bounds, got {len(bounds)}")
        for lo, hi in bounds:
            if lo > hi:
                raise Infeasible(f"variable bound [{lo}, {hi}] is empty")
        constraints = []
        for c in self.constraints:
            if not isinstance(c, LinearConstraint):
                a, sense, b = c
                c = LinearConstraint(tuple(a), ConstraintSense.parse(sense), float(b))
            if len(c.coefficients) != p:
                raise ValidationError("constraint length does not match the objective")
            constraints.append(c)
        object.__setattr__(self, "objective", objective)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "constraints", tuple(constraints))
        object.__setattr__(self, "sense", OptimizationSense.parse(self.sense))

    @property
    def n_variables(self) -> int:
        return len(self.objective)

    def with_sense(self, sense) -> "LpProblem":
        return LpProblem(self.objective, self.bounds, self.constraints, sense)


class LpSolution(NamedTuple):
    value: float
    x: np.ndarray


_MAX_PIVOTS = 50000


def _pivot(tableau: np.ndarray, basis: List[int], row: int, col: int) -> None:
    tableau[row] /= tableau[row, col]
    factors = tableau[:, col].copy()
    factors[row] = 0.0
    tableau -= np.outer(factors, tableau[row])
    basis[row] = col


def _simplex(tableau: np.ndarray, basis: List[int], allowed: int, tol: float) -> None:
    """Minimise the cost row in place with Bland's rule."""
    m = tableau.shape[0] - 1
    for _ in range(_MAX_PIVOTS):
        costs = tableau[-1, :allowed]
        candidates = np.flatnonzero(costs < -tol)
        if candidates.size == 0:
            return
        entering = int(candidates[0])
        column = tableau[:m, entering]
        positive = column > tol
        if not positive.any():
            raise Unbounded("objective is unbounded on the feasible set")
        ratios = np.full(m, np.inf)
        ratios[positive] = tableau[:m, -1][positive] / column[positive]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + tol)
        leaving = int(min(ties, key=lambda r: basis[r]))
        _pivot(tableau, basis, leaving, entering)
    raise NoConvergence(f"simplex exceeded {_MAX_PIVOTS} pivots")


def _standardise(problem: LpProblem):
    """
    Rewrite x in terms of nonnegative variables: x = offset + M x'.

    Lower-bounded variables are shifted, upper-only variables reflected and
    free variables split. Finite upper bounds of shifted variables become
    constraint rows.
    """
    p = problem.n_variables
    offset = np.zeros(p)
    columns: List[np.ndarray] = []
    extra_rows: List[Tuple[np.ndarray, ConstraintSense, float]] = []
    for j, (lo, hi) in enumerate(problem.bounds):
        unit = np.zeros(p)
        unit[j] = 1.0
        if np.isfinite(lo):
            offset[j] = lo
            columns.append(unit)
            if np.isfinite(hi):
                extra_rows.append((unit, ConstraintSense.LE, hi))
        elif np.isfinite(hi):
            offset[j] = hi
            columns.append(-unit)
        else:
            columns.append(unit)
            columns.append(-unit)
    M = np.column_stack(columns)

    rows = [(np.asarray(c.coefficients, dtype=float), c.sense, c.rhs) for c in problem.constraints]
    rows.extend(extra_rows)
    return offset, M, rows


def solve_lp(problem: LpProblem, tol: Optional[float] = None) -> LpSolution:
    """
    Solve a small dense linear program with the two-phase simplex method.

    Raises Infeasible or Unbounded; returns the optimal value in the
    problem's own sense together with an optimal vertex.
    """
    tol = app_settings.LP_TOL if tol is None else tol
    offset, M, rows = _standardise(problem)
    c = np.asarray(problem.objective)
    if problem.sense == OptimizationSense.MAX:
        c_min = -c
    else:
        c_min = c
    q = M.shape[1]
    m = len(rows)
    n_slack = sum(1 for _, sense, _ in rows if sense != ConstraintSense.EQ)

    A = np.zeros((m, q + n_slack))
    b = np.zeros(m)
    slack = q
    for r, (a, sense, rhs) in enumerate(rows):
        A[r, :q] = a @ M
        b[r] = rhs - a @ offset
        if sense == ConstraintSense.LE:
            A[r, slack] = 1.0
            slack += 1
        elif sense == ConstraintSense.GE:
            A[r, slack] = -1.0
            slack += 1
        if b[r] < 0:
            A[r] *= -1.0
            b[r] *= -1.0
    n_struct = q + n_slack

    # phase 1: artificial basis on every row
    tableau = np.zeros((m + 1, n_struct + m + 1))
    tableau[:m, :n_struct] = A
    tableau[:m, n_struct:n_struct + m] = np.eye(m)
    tableau[:m, -1] = b
    tableau[-1, :n_struct] = -A.sum(axis=0)
    tableau[-1, -1] = -b.sum()
    basis = list(range(n_struct, n_struct + m))
    _simplex(tableau, basis, n_struct + m, tol)
    if -tableau[-1, -1] > tol * max(1.0, float(np.max(np.abs(b), initial=0.0))):
        raise Infeasible(
            "constraints admit no feasible point",
            details={"phase_one_value": float(-tableau[-1, -1])},
        )

    keep_rows = []
    for r in range(m):
        if basis[r] >= n_struct:
            candidates = np.flatnonzero(np.abs(tableau[r, :n_struct]) > tol)
            if candidates.size == 0:
                continue
            _pivot(tableau, basis, r, int(candidates[0]))
        keep_rows.append(r)
    tableau = np.vstack([tableau[keep_rows][:, list(range(n_struct)) + [-1]], np.zeros(n_struct + 1)])
    basis = [basis[r] for r in keep_rows]

    # phase 2
    costs = np.zeros(n_struct)
    costs[:q] = c_min @ M
    tableau[-1, :n_struct] = costs
    for r, col in enumerate(basis):
        tableau[-1] -= costs[col] * tableau[r]
    _simplex(tableau, basis, n_struct, tol)

    solution = np.zeros(n_struct)
    for r, col in enumerate(basis):
        solution[col] = tableau[r, -1]
    x = offset + M @ solution[:q]
    return LpSolution(value=float(c @ x), x=x)
