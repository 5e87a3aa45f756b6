# stagger_lab/orthogonal.py

"""
Debiased GATT estimation with orthogonal scores.

For a cell (g, t) with base period g - 1, the outcome is the long difference
dY = Y_t - Y_{g-1} and covariates are read at g - 1. The score is

    psi = 1{G=g}(dY - theta) - 1{G=g} m(X) - 1{G=NEVER} alpha(X) (dY - m(X))

where m is the never-treated outcome regression and alpha the Riesz
representer, estimated through logit odds and scaled so that the
never-treated representer mass equals the cohort count.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from sklearn.model_selection import KFold

from .conf import app_settings
from .constants import ControlKind, ScoreKind
from .exceptions import FoldCohortStarvation, OverlapFailure, ValidationError
from .group_time import GattEntry, GattTable
from .models import Panel
from .regression import fit_logit, least_squares, logit_probabilities
from .utils import parallel_map

logger = logging.getLogger("stagger_lab")


# ====== NUISANCE HANDLES ======

def _design(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.column_stack([np.ones(X.shape[0]), X])


@dataclass(frozen=True)
class LinearFunction:
    """x -> [1, x] . coef"""

    coef: Tuple[float, ...]

    def __call__(self, X) -> np.ndarray:
        return _design(X) @ np.asarray(self.coef)


@dataclass(frozen=True)
class OddsRepresenter:
    """x -> scale * p(x) / (1 - p(x)) for a logit p."""

    coef: Tuple[float, ...]
    scale: float = 1.0

    def __call__(self, X) -> np.ndarray:
        p = logit_probabilities(_design(X), self.coef)
        return self.scale * p / (1.0 - p)

    def probabilities(self, X) -> np.ndarray:
        return logit_probabilities(_design(X), self.coef)


@dataclass(frozen=True)
class NuisancePair:
    m0: Callable
    alpha: Callable
    fold: Optional[int] = None
    dictionary_size: int = 0


@dataclass(frozen=True, eq=False)
class CellSample:
    """Comparison sample of one (g, t) cell: cohort g and never-treated units."""

    units: np.ndarray
    change: np.ndarray
    covariates: np.ndarray
    is_cohort: np.ndarray

    @property
    def is_never(self) -> np.ndarray:
        return ~self.is_cohort


def cell_sample(panel: Panel, g: int, t: int) -> CellSample:
    base = g - 1
    if base < 1:
        raise ValidationError(f"cohort {g} has no pre-period inside the panel")
    if not g <= t <= panel.T:
        raise ValidationError(f"period {t} is not a post period of cohort {g}")
    observed = panel.observed[:, t - 1] & panel.observed[:, base - 1]
    members = ((panel.cohorts == g) | panel.never_mask) & observed
    units = np.flatnonzero(members)
    change = panel.outcomes[units, t - 1] - panel.outcomes[units, base - 1]
    return CellSample(
        units=units,
        change=change,
        covariates=panel.covariates[units, base - 1, :],
        is_cohort=panel.cohorts[units] == g,
    )


def _fit_odds(X: np.ndarray, is_cohort: np.ndarray) -> OddsRepresenter:
    coef = fit_logit(_design(X), is_cohort.astype(float))
    return OddsRepresenter(tuple(float(c) for c in coef))


def _check_overlap(representer: OddsRepresenter, X: np.ndarray) -> None:
    p = representer.probabilities(X)
    limit = 1.0 - app_settings.OVERLAP_CLIP
    if np.any(p >= limit):
        raise OverlapFailure(
            f"representer odds unbounded: {int(np.sum(p >= limit))} propensities reach {limit}",
            details={"max_propensity": float(p.max())},
        )


def _scaled(representer: OddsRepresenter, X_never: np.ndarray, n_cohort: int) -> OddsRepresenter:
    raw = OddsRepresenter(representer.coef)(X_never).sum()
    scale = n_cohort / raw if raw > 0 else 0.0
    return OddsRepresenter(representer.coef, scale)


def riesz_representer(panel: Panel, g: int, t: int) -> OddsRepresenter:
    """
    In-sample representer for cell (g, t).

    Scaled so that sum over never-treated units of alpha(X_i) equals N_g.
    """
    sample = cell_sample(panel, g, t)
    representer = _fit_odds(sample.covariates, sample.is_cohort)
    _check_overlap(representer, sample.covariates)
    return _scaled(representer, sample.covariates[sample.is_never], int(sample.is_cohort.sum()))


def outcome_regression(X: np.ndarray, change: np.ndarray) -> LinearFunction:
    """OLS of the long difference on [1, X]."""
    result = least_squares(_design(X), change)
    return LinearFunction(tuple(float(c) for c in result.coefficients))


# ====== SCORE ======

def _as_matrix(x, n: int) -> np.ndarray:
    X = np.asarray(x, dtype=float)
    if X.ndim == 2:
        return X
    if X.size == 0:
        return np.zeros((n, 0))
    return X.reshape(n, -1)


def dr_score(y, x, cohort, theta: float, m0: Callable, alpha: Callable, g):
    """
    Doubly-robust score of each observation.

    Units in neither cohort g nor the never-treated group score zero.
    """
    scalar = np.ndim(y) == 0
    y = np.atleast_1d(np.asarray(y, dtype=float))
    cohort = np.atleast_1d(np.asarray(cohort, dtype=float))
    X = _as_matrix(x, y.size)
    in_cohort = cohort == g
    in_never = np.isinf(cohort)
    m = np.asarray(m0(X), dtype=float)
    a = np.asarray(alpha(X), dtype=float)
    score = np.where(in_cohort, y - theta - m, 0.0) - np.where(in_never, a * (y - m), 0.0)
    return float(score[0]) if scalar else score


def plug_in_score(y, x, cohort, theta: float, m0: Callable, g):
    """Outcome-regression score without the representer correction."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    cohort = np.atleast_1d(np.asarray(cohort, dtype=float))
    X = _as_matrix(x, y.size)
    return np.where(cohort == g, y - theta - np.asarray(m0(X), dtype=float), 0.0)


# ====== CROSS-FITTING ======

@dataclass(frozen=True, eq=False)
class FoldPlan:
    """Unit-level fold assignment over a sample of size n."""

    M: int
    assignment: np.ndarray = field(repr=False)

    def folds(self):
        for m in range(self.M):
            yield m, np.flatnonzero(self.assignment == m)


def make_fold_plan(n: int, M: int, seed: int) -> FoldPlan:
    """Shuffled KFold partition determined by (seed, n, M)."""
    if M < 2:
        raise ValidationError(f"cross-fitting needs at least 2 folds, got {M}")
    if n < M:
        raise ValidationError(f"cannot split {n} units into {M} nonempty folds")
    assignment = np.empty(n, dtype=int)
    splitter = KFold(n_splits=M, shuffle=True, random_state=seed)
    for m, (_, test) in enumerate(splitter.split(np.arange(n))):
        assignment[test] = m
    return FoldPlan(M, assignment)


@dataclass(frozen=True, eq=False)
class CrossFitResult:
    g: int
    t: int
    estimate: float
    se: float
    n_treated: int
    n_control: int
    influence: np.ndarray = field(repr=False)
    nuisances: Tuple[NuisancePair, ...] = field(default=(), repr=False)


def _fold_nuisances(sample: CellSample, plan: FoldPlan, m: int, evaluate: np.ndarray) -> NuisancePair:
    train = plan.assignment != m
    train_cohort = train & sample.is_cohort
    train_never = train & sample.is_never
    if not train_cohort.any() or not train_never.any():
        raise FoldCohortStarvation(
            f"training complement of fold {m} lacks a cohort",
            details={"fold": m, "cohort": int(train_cohort.sum()), "never": int(train_never.sum())},
        )
    eval_cohort = evaluate & sample.is_cohort
    eval_never = evaluate & sample.is_never
    if eval_cohort.any() and not eval_never.any():
        raise FoldCohortStarvation(
            f"fold {m} has treated units but no never-treated units",
            details={"fold": m},
        )

    representer = _fit_odds(sample.covariates[train], sample.is_cohort[train])
    _check_overlap(representer, sample.covariates[evaluate])
    representer = _scaled(representer, sample.covariates[eval_never], int(eval_cohort.sum()))
    regression = outcome_regression(sample.covariates[train_never], sample.change[train_never])
    return NuisancePair(regression, representer, fold=m, dictionary_size=sample.covariates.shape[1] + 1)


def crossfit_gatt(
    panel: Panel,
    g: int,
    t: int,
    M: Optional[int] = None,
    seed: int = 0,
    threads: Optional[int] = None,
) -> CrossFitResult:
    """
    Cross-fitted debiased GATT(g, t).

    theta = [sum_g (dY - m) - sum_NEVER alpha (dY - m)] / N_g with fold-out
    nuisances; the standard error is the plug-in sandwich sqrt(sum psi^2) / N_g.
    """
    M = app_settings.CROSSFIT_FOLDS if M is None else M
    sample = cell_sample(panel, g, t)
    n_cohort = int(sample.is_cohort.sum())
    if n_cohort == 0 or not sample.is_never.any():
        raise FoldCohortStarvation(
            f"cell (g={g}, t={t}) needs cohort and never-treated units",
            details={"cohort": n_cohort, "never": int(sample.is_never.sum())},
        )
    plan = make_fold_plan(sample.units.size, M, seed)

    def fit(m):
        return _fold_nuisances(sample, plan, m, plan.assignment == m)

    nuisances = parallel_map(fit, range(plan.M), threads)

    m_hat = np.empty(sample.units.size)
    alpha_hat = np.empty(sample.units.size)
    for pair in nuisances:
        rows = plan.assignment == pair.fold
        m_hat[rows] = pair.m0(sample.covariates[rows])
        alpha_hat[rows] = pair.alpha(sample.covariates[rows])

    residual = sample.change - m_hat
    numerator = residual[sample.is_cohort].sum() - (alpha_hat * residual)[sample.is_never].sum()
    theta = float(numerator / n_cohort)
    psi = np.where(sample.is_cohort, residual - theta, -alpha_hat * residual)

    influence = np.zeros(panel.n)
    influence[sample.units] = psi / n_cohort
    se = float(np.sqrt(np.sum(influence ** 2)))
    logger.debug(f"Cross-fitted GATT({g},{t}) = {theta:.6g} (se {se:.3g}) over {plan.M} folds")
    return CrossFitResult(
        g, t, theta, se, n_cohort, int(sample.is_never.sum()), influence, tuple(nuisances)
    )


def crossfit_table(
    panel: Panel,
    M: Optional[int] = None,
    seed: int = 0,
    cells: Optional[Sequence[Tuple[int, int]]] = None,
    threads: Optional[int] = None,
) -> GattTable:
    """Cross-fitted cells in a never-treated GattTable for aggregation."""
    if cells is None:
        cells = [(g, t) for g in panel.cohort_values if g >= 2 for t in range(g, panel.T + 1)]

    def run(cell):
        result = crossfit_gatt(panel, cell[0], cell[1], M, seed, threads=1)
        return GattEntry(
            result.g, result.t, result.estimate, result.se, result.n_treated,
            result.n_control, ControlKind.NEVER_TREATED, result.influence,
        )

    entries = {(e.g, e.t): e for e in parallel_map(run, list(cells), threads)}
    return GattTable(entries, ControlKind.NEVER_TREATED, panel.n, panel.first_period)


# ====== ORTHOGONALITY CHECK ======

def _constant_direction(X) -> np.ndarray:
    return np.ones(np.asarray(X).shape[0])


@dataclass(frozen=True)
class OrthogonalityReport:
    epsilons: Tuple[float, ...]
    mean_scores: Tuple[float, ...]
    intercept: float
    linear: float
    quadratic: float
    score: ScoreKind


def orthogonality_check(
    panel: Panel,
    g: int,
    t: int,
    direction: Callable = _constant_direction,
    epsilons: Sequence[float] = (-0.1, -0.05, 0.0, 0.05, 0.1),
    alpha_direction: Optional[Callable] = None,
    score=ScoreKind.ORTHOGONAL,
    nuisances: Optional[NuisancePair] = None,
    theta: Optional[float] = None,
) -> OrthogonalityReport:
    """
    Mean score along (m + eps h, alpha + eps h_alpha) and its quadratic fit.

    Defaults to in-sample nuisances and the theta that zeroes the mean
    orthogonal score at eps = 0; ``h_alpha`` defaults to ``h``. The linear
    coefficient estimates the Gateaux derivative of the moment.
    """
    score = ScoreKind.parse(score)
    alpha_direction = alpha_direction or direction
    if len(epsilons) < 3:
        raise ValidationError("need at least three epsilon values for a quadratic fit")
    sample = cell_sample(panel, g, t)
    X = sample.covariates
    cohort = np.where(sample.is_cohort, float(g), np.inf)
    if nuisances is None:
        regression = outcome_regression(X[sample.is_never], sample.change[sample.is_never])
        nuisances = NuisancePair(regression, riesz_representer(panel, g, t), dictionary_size=X.shape[1] + 1)
    if theta is None:
        residual = sample.change - nuisances.m0(X)
        numerator = residual[sample.is_cohort].sum() - (nuisances.alpha(X) * residual)[sample.is_never].sum()
        theta = float(numerator / sample.is_cohort.sum())

    h = np.asarray(direction(X), dtype=float)
    h_alpha = np.asarray(alpha_direction(X), dtype=float)
    base_m = np.asarray(nuisances.m0(X), dtype=float)
    base_alpha = np.asarray(nuisances.alpha(X), dtype=float)

    means = []
    for eps in epsilons:
        m_eps = base_m + eps * h
        if score == ScoreKind.ORTHOGONAL:
            a_eps = base_alpha + eps * h_alpha
            values = dr_score(sample.change, X, cohort, theta, lambda _: m_eps, lambda _: a_eps, g)
        else:
            values = plug_in_score(sample.change, X, cohort, theta, lambda _: m_eps, g)
        means.append(float(np.mean(values)))

    quadratic, linear, intercept = np.polyfit(np.asarray(epsilons, dtype=float), np.asarray(means), 2)
    return OrthogonalityReport(
        tuple(float(e) for e in epsilons), tuple(means), float(intercept), float(linear),
        float(quadratic), score,
    )
