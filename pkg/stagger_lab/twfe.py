# stagger_lab/twfe.py

"""
Two-way fixed effects event-study regression and its implicit weights.

Every TWFE coefficient is a linear functional of the outcomes,
beta_k = pi(k) . Y, where pi(k) depends on the design only. Cohort-horizon
weights are the cohort-cell sums of pi(k), which reproduce the regression's
response to an effect injected in any single cell.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.linalg import solve_triangular

from .exceptions import DroppedColumn, RankZeroDesign, ValidationError
from .models import EventWindow, Panel
from .regression import pivoted_qr, twoway_demean
from .utils import write_frame

logger = logging.getLogger("stagger_lab")


@dataclass(frozen=True)
class EventDesign:
    """
    Stacked relative-time indicators.

    Row ``i * T + (t - 1)`` holds cell (i, t); column j is the indicator of
    event time ``column_order[j]``. Unobserved cells are all-zero rows.
    """

    matrix: np.ndarray
    column_order: Tuple[int, ...]
    cell_index: np.ndarray

    def column(self, k: int) -> np.ndarray:
        return self.matrix[:, self.column_order.index(k)]

    @property
    def support(self) -> Dict[int, int]:
        return {k: int(self.matrix[:, j].sum()) for j, k in enumerate(self.column_order)}


def build_event_design(panel: Panel, window: EventWindow) -> EventDesign:
    """
    Indicator matrix of D^(k)_it = 1{t - G_i = k} for k in K without k0.

    Event times outside the window get no column.
    """
    n, T = panel.n, panel.T
    relative = panel.periods[None, :] - panel.cohorts[:, None]
    live = panel.treated_mask[:, None] & panel.observed
    columns = [((relative == k) & live).reshape(-1) for k in window.estimated]
    matrix = np.column_stack(columns).astype(float)
    cells = np.column_stack(
        [np.repeat(np.arange(n), T), np.tile(np.arange(1, T + 1), n)]
    )
    return EventDesign(matrix=matrix, column_order=window.estimated, cell_index=cells)


@dataclass(frozen=True, eq=False)
class TwfeProjection:
    """
    Residualised design and its coefficient map.

    ``pi`` is (n*T) x r with one column per retained horizon so that the
    retained coefficients equal ``pi.T @ y``.
    """

    panel: Panel
    window: EventWindow
    design: EventDesign
    residualised: np.ndarray
    pi: np.ndarray
    retained: Tuple[int, ...]
    dropped: Tuple[int, ...]

    def pi_column(self, k: int) -> np.ndarray:
        if k not in self.retained:
            raise DroppedColumn(
                f"horizon {k} is not identified in this design",
                details={"k": k, "dropped": list(self.dropped)},
            )
        return self.pi[:, self.retained.index(k)]


def twfe_projection(panel: Panel, window: EventWindow) -> TwfeProjection:
    """
    Demean the event design on both fixed effects and invert it.

    Uses the pivoted QR Z = Q R so that pi = Q R^{-T}. Horizons with no
    support or collinear with others are dropped.
    """
    design = build_event_design(panel, window)
    n, T, m = panel.n, panel.T, design.matrix.shape[1]
    Z = twoway_demean(design.matrix.reshape(n, T, m), panel.observed).reshape(n * T, m)
    Q, R, keep, dropped_idx = pivoted_qr(Z)
    if keep.size == 0:
        raise RankZeroDesign(
            "residualised event design has rank zero",
            details={"window": list(window.horizons)},
        )
    order = np.sort(keep)
    # pi in pivot order, then rearranged by horizon
    pi_pivot = solve_triangular(R, Q.T).T
    position = {int(j): p for p, j in enumerate(keep)}
    pi = pi_pivot[:, [position[int(j)] for j in order]]
    retained = tuple(design.column_order[j] for j in order)
    dropped = tuple(design.column_order[j] for j in dropped_idx)
    if dropped:
        logger.warning(f"TWFE horizons not identified and dropped: {list(dropped)}")
    return TwfeProjection(panel, window, design, Z, pi, retained, dropped)


# ====== COEFFICIENTS ======

@dataclass(frozen=True, eq=False)
class TwfeResult:
    """Event-study coefficients with unit-clustered standard errors."""

    coefficients: Dict[int, float]
    standard_errors: Dict[int, float]
    dropped: Tuple[int, ...]
    projection: TwfeProjection = field(repr=False)
    unit_scores: Optional[np.ndarray] = field(default=None, repr=False)

    def coefficient(self, k: int) -> float:
        if k not in self.coefficients:
            raise DroppedColumn(f"horizon {k} is not identified", details={"k": k})
        return self.coefficients[k]

    def pre_coefficients(self) -> Dict[int, float]:
        return {k: b for k, b in self.coefficients.items() if k < 0}

    def combination(self, weights: Mapping[int, float]) -> Tuple[float, float]:
        """Estimate and clustered standard error of sum_k c_k beta_k."""
        c = np.zeros(len(self.projection.retained))
        for k, w in weights.items():
            self.coefficient(k)
            c[self.projection.retained.index(k)] = float(w)
        estimate = float(sum(float(w) * self.coefficients[k] for k, w in weights.items()))
        return estimate, float(np.sqrt(np.sum((self.unit_scores @ c) ** 2)))

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"k": k, "estimate": self.coefficients.get(k, np.nan),
             "se": self.standard_errors.get(k, np.nan), "identified": int(k in self.coefficients)}
            for k in self.projection.window.estimated
        ]
        return pd.DataFrame(rows, columns=["k", "estimate", "se", "identified"])


def stacked_outcomes(panel: Panel) -> np.ndarray:
    return np.where(panel.observed, panel.outcomes, 0.0).reshape(-1)


def twfe_event_coeffs(
    panel: Panel,
    window: EventWindow,
    projection: Optional[TwfeProjection] = None,
) -> TwfeResult:
    """
    Fit the event-study regression through its FWL representation.

    Standard errors cluster by unit: each unit contributes
    s_i = sum_t pi_it (Y~_it - Z_it beta).
    """
    projection = projection or twfe_projection(panel, window)
    y = stacked_outcomes(panel)
    beta = projection.pi.T @ y

    Y_tilde = twoway_demean(np.where(panel.observed, panel.outcomes, 0.0), panel.observed).reshape(-1)
    keep_cols = [projection.design.column_order.index(k) for k in projection.retained]
    residuals = Y_tilde - projection.residualised[:, keep_cols] @ beta
    scores = (projection.pi * residuals[:, None]).reshape(panel.n, panel.T, -1).sum(axis=1)
    se = np.sqrt(np.sum(scores ** 2, axis=0))

    coefficients = {k: float(b) for k, b in zip(projection.retained, beta)}
    standard_errors = {k: float(s) for k, s in zip(projection.retained, se)}
    logger.debug(f"TWFE coefficients over {len(coefficients)} horizons")
    return TwfeResult(coefficients, standard_errors, projection.dropped, projection, scores)


# ====== IMPLICIT WEIGHTS ======

@dataclass(frozen=True, eq=False)
class WeightDecomposition:
    """
    In-sample implicit weights of one TWFE coefficient.

    Attributes:
        target: horizon k of the coefficient
        pi: stacked observation weights pi(k), zero on unobserved cells
        weights: w_{g,k'}(k) over post cells (k' >= 0) of treated cohorts
        pre_weights: the same sums over pre cells (k' < 0)
        normalized: whether the post weights sum to one
    """

    target: int
    pi: np.ndarray
    weights: Dict[Tuple[int, int], float]
    pre_weights: Dict[Tuple[int, int], float]
    normalized: bool

    @property
    def total(self) -> float:
        return float(sum(self.weights.values()))

    def all_weights(self) -> Dict[Tuple[int, int], float]:
        merged = dict(self.pre_weights)
        merged.update(self.weights)
        return merged


def coefficient_weights(
    panel: Panel,
    window: EventWindow,
    k: int,
    projection: Optional[TwfeProjection] = None,
) -> WeightDecomposition:
    """
    Recover pi(k) and the cohort-horizon weights without looking at Y.

    w_{g,k'}(k) = sum over cohort-g units of pi_{i, g+k'}(k).
    """
    if k not in window.estimated:
        raise ValidationError(f"horizon {k} is not an estimated horizon of the window")
    projection = projection or twfe_projection(panel, window)
    pi = projection.pi_column(k)
    grid = pi.reshape(panel.n, panel.T)

    weights: Dict[Tuple[int, int], float] = {}
    pre_weights: Dict[Tuple[int, int], float] = {}
    for g in panel.cohort_values:
        column_sums = grid[panel.cohorts == g].sum(axis=0)
        for t in range(1, panel.T + 1):
            k_prime = t - g
            target = weights if k_prime >= 0 else pre_weights
            target[(g, k_prime)] = float(column_sums[t - 1])

    total = sum(weights.values())
    normalized = abs(total - 1.0) < 1e-8
    if k >= 0 and not normalized:
        logger.debug(f"post weights of horizon {k} sum to {total:.6g}; window omits realised event times")
    return WeightDecomposition(k, pi, weights, pre_weights, normalized)


def weights_frame(panel: Panel, decompositions) -> pd.DataFrame:
    """Long table target_k, g, k_prime, weight with calendar cohorts."""
    rows = []
    for decomposition in decompositions:
        for (g, k_prime), w in sorted(decomposition.all_weights().items()):
            rows.append(
                {"target_k": decomposition.target, "g": panel.calendar_time(g),
                 "k_prime": k_prime, "weight": w}
            )
    return pd.DataFrame(rows, columns=["target_k", "g", "k_prime", "weight"])


def write_weights_csv(panel: Panel, decompositions, path: Union[str, Path]) -> Path:
    return write_frame(weights_frame(panel, decompositions), path)
