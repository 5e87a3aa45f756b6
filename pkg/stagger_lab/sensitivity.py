# stagger_lab/sensitivity.py

"""
Sensitivity analysis for violations of parallel trends.

Deviation paths delta_{g,t} are restricted either by a curvature class
(bounded pre-period levels, bounded second differences after adoption) or
by a scalar bias bound. Identified sets come from two linear programs;
robust intervals widen a Wald interval by the bias bound. Calibration,
holdout selection, breakdown frontiers and admissibility maps build on
these pieces.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import norm

from .conf import app_settings
from .constants import Z_975, ConstraintSense, OptimizationSense, RestrictionKind
from .exceptions import (
    EmptyGrid,
    MissingBaseline,
    NoFeasibleB,
    TooFewPrePeriods,
    ValidationError,
)
from .regression import LinearConstraint, LpProblem, solve_lp
from .validators import validate_grid, validate_nonnegative, validate_probability

logger = logging.getLogger("stagger_lab")

Triple = Tuple[float, float, float]


# ====== RESTRICTION CLASSES ======

@dataclass(frozen=True)
class RestrictionClass:
    """
    Admissible deviation paths.

    Attributes:
        kind: curvature-bounded or bias-bound-scalar
        B: bound on pre-period deviation levels
        Gamma: bound on post-period second differences
        DeltaR: relaxation radius applied to B
        t0: adoption period entering the scalar bias bound
    """

    kind: RestrictionKind = RestrictionKind.CURVATURE_BOUNDED
    B: float = 0.0
    Gamma: float = 0.0
    DeltaR: float = 0.0
    t0: int = 2

    def __post_init__(self):
        object.__setattr__(self, "kind", RestrictionKind.parse(self.kind))
        object.__setattr__(self, "B", validate_nonnegative(self.B, "B"))
        object.__setattr__(self, "Gamma", validate_nonnegative(self.Gamma, "Gamma"))
        object.__setattr__(self, "DeltaR", validate_nonnegative(self.DeltaR, "DeltaR"))
        if int(self.t0) < 2:
            raise ValidationError(f"t0 must be >= 2, got {self.t0}")

    @property
    def level_bound(self) -> float:
        return (1.0 + self.DeltaR) * self.B

    def contains(self, other: "RestrictionClass") -> bool:
        """Coordinatewise nesting of the parameters."""
        return (
            self.kind == other.kind
            and other.B <= self.B
            and other.Gamma <= self.Gamma
            and other.DeltaR <= self.DeltaR
        )


@dataclass(frozen=True)
class DeviationMap:
    """theta(delta) = theta_hat + sum coefficient_{g,t} delta_{g,t}."""

    coefficients: Dict[Tuple[int, int], float]

    def __post_init__(self):
        if not self.coefficients:
            raise ValidationError("deviation map has no cells")

    @classmethod
    def from_weights(cls, weights: Mapping[int, float], horizon: int) -> "DeviationMap":
        """Map of an event-time aggregate: cohort g loads on cell (g, g + horizon)."""
        return cls({(int(g), int(g) + horizon): float(w) for g, w in weights.items()})

    def cohorts(self) -> Tuple[int, ...]:
        return tuple(sorted({g for g, _ in self.coefficients}))


@dataclass(frozen=True, eq=False)
class IdentifiedSet:
    lower: float
    upper: float
    lower_path: Dict[Tuple[int, int], float] = field(default_factory=dict, repr=False)
    upper_path: Dict[Tuple[int, int], float] = field(default_factory=dict, repr=False)

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float, tol: float = 1e-9) -> bool:
        return self.lower - tol <= value <= self.upper + tol


def bias_bound(B: float, Gamma: float, DeltaR: float, t0: int) -> float:
    """Worst-case bias (1 + DeltaR) B + (t0 - 2) Gamma."""
    B = validate_nonnegative(B, "B")
    Gamma = validate_nonnegative(Gamma, "Gamma")
    DeltaR = validate_nonnegative(DeltaR, "DeltaR")
    if int(t0) < 2:
        raise ValidationError(f"t0 must be >= 2, got {t0}")
    return (1.0 + DeltaR) * B + (int(t0) - 2) * Gamma


def _restriction_lp(deviation_map: DeviationMap, rc: RestrictionClass):
    """
    Variables delta_{g,t} for t = 1..t_max(g) of every cohort in the map.

    Pre cells (t < g) are boxed by (1 + DeltaR) B. A post cell t >= g bounds
    delta_t - 2 delta_{t-1} + delta_{t-2} by Gamma, or the first difference
    when t - 2 falls before period 1; a cohort adopting at t = 1 has no
    anchor.
    """
    cells = []
    for g in deviation_map.cohorts():
        t_max = max(t for (c, t) in deviation_map.coefficients if c == g)
        cells.extend((g, t) for t in range(1, t_max + 1))
    position = {cell: j for j, cell in enumerate(cells)}
    p = len(cells)

    objective = [deviation_map.coefficients.get(cell, 0.0) for cell in cells]
    constraints = []
    if rc.kind == RestrictionKind.BIAS_BOUND_SCALAR:
        box = bias_bound(rc.B, rc.Gamma, rc.DeltaR, rc.t0)
        bounds = [(-box, box)] * p
        return cells, LpProblem(tuple(objective), tuple(bounds), ())

    bounds = []
    for g, t in cells:
        if t < g:
            bounds.append((-rc.level_bound, rc.level_bound))
            continue
        bounds.append((-math.inf, math.inf))
        row = np.zeros(p)
        row[position[(g, t)]] = 1.0
        if t - 2 >= 1:
            row[position[(g, t - 1)]] = -2.0
            row[position[(g, t - 2)]] = 1.0
        elif t - 1 >= 1:
            row[position[(g, t - 1)]] = -1.0
        else:
            continue
        constraints.append(LinearConstraint(tuple(row), ConstraintSense.LE, rc.Gamma))
        constraints.append(LinearConstraint(tuple(row), ConstraintSense.GE, -rc.Gamma))
    return cells, LpProblem(tuple(objective), tuple(bounds), tuple(constraints))


def identified_set(
    theta_hat: float,
    deviation_map: DeviationMap,
    rc: RestrictionClass,
) -> IdentifiedSet:
    """
    Sharp bounds on theta_hat + sum c delta over the restriction class.

    Raises Unbounded when a loaded cohort has no pre-period anchor.
    """
    cells, problem = _restriction_lp(deviation_map, rc)
    low = solve_lp(problem.with_sense(OptimizationSense.MIN))
    high = solve_lp(problem.with_sense(OptimizationSense.MAX))
    return IdentifiedSet(
        lower=float(theta_hat + low.value),
        upper=float(theta_hat + high.value),
        lower_path={cell: float(v) for cell, v in zip(cells, low.x)},
        upper_path={cell: float(v) for cell, v in zip(cells, high.x)},
    )


def critical_value(alpha: float = 0.05) -> float:
    alpha = validate_probability(alpha, "alpha")
    if alpha == 0.05:
        return Z_975
    return float(norm.ppf(1.0 - alpha / 2.0))


def robust_interval(theta_hat: float, se: float, bound: float, alpha: float = 0.05) -> Tuple[float, float]:
    """theta_hat -/+ (z_{1-alpha/2} se + bound)."""
    se = validate_nonnegative(se, "se")
    bound = validate_nonnegative(bound, "bound")
    half = critical_value(alpha) * se + bound
    return (float(theta_hat - half), float(theta_hat + half))


# ====== CALIBRATION ======

KAPPA_B_GRID = (0.0, 0.25, 0.5, 1.0, 2.0)
GAMMA_PERCENT_GRID = (0.0, 1.0, 2.0, 5.0, 10.0)
GAMMA_LEVEL_GRID = (0.0, 0.05, 0.10, 0.15)
C_R_GRID = (0.0, 0.5, 1.0, 2.0)


@dataclass(frozen=True)
class CalibrationOutput:
    A_pre: float
    M_pre: float
    drift: float
    B_hat: float
    Gamma_hat: float
    DeltaR_hat: float
    kappa_B: float
    c_R: float
    grids: Dict[str, Tuple[float, ...]] = field(default_factory=dict)
    trace: Tuple[str, ...] = ()


def calibrate(
    pre_coeffs: Mapping[int, Tuple[float, float]],
    tau_hat: float,
    kappa_B: float = 1.0,
    c_R: float = 0.5,
    eps_tau: Optional[float] = None,
) -> CalibrationOutput:
    """
    Anchor (B, Gamma, DeltaR) to pre-period evidence.

    A_pre = max |beta|, M_pre = max |beta / sigma|, drift = largest change
    between consecutive pre coefficients, B = kappa_B A_pre,
    DeltaR = c_R A_pre, Gamma = 100 drift / (|tau_hat| + eps_tau).
    """
    eps_tau = app_settings.EPS_TAU if eps_tau is None else eps_tau
    if len(pre_coeffs) < 2:
        raise TooFewPrePeriods(
            f"calibration needs at least 2 pre-period coefficients, got {len(pre_coeffs)}"
        )
    if eps_tau <= 0:
        raise ValidationError("eps_tau must be > 0")
    kappa_B = validate_nonnegative(kappa_B, "kappa_B")
    c_R = validate_nonnegative(c_R, "c_R")

    horizons = sorted(pre_coeffs)
    beta = np.array([float(pre_coeffs[h][0]) for h in horizons])
    sigma = np.array([float(pre_coeffs[h][1]) for h in horizons])
    if np.any(sigma <= 0):
        raise ValidationError("pre-period standard errors must be > 0")

    A_pre = float(np.max(np.abs(beta)))
    M_pre = float(np.max(np.abs(beta / sigma)))
    drift = float(np.max(np.abs(np.diff(beta))))
    output = CalibrationOutput(
        A_pre=A_pre,
        M_pre=M_pre,
        drift=drift,
        B_hat=kappa_B * A_pre,
        Gamma_hat=100.0 * drift / (abs(float(tau_hat)) + eps_tau),
        DeltaR_hat=c_R * A_pre,
        kappa_B=kappa_B,
        c_R=c_R,
        grids={"kappa_B": KAPPA_B_GRID, "Gamma": GAMMA_PERCENT_GRID, "c_R": C_R_GRID},
        trace=tuple(f"l={h}: beta={b:.6g}, sigma={s:.6g}" for h, b, s in zip(horizons, beta, sigma)),
    )
    logger.info(
        f"Calibrated B={output.B_hat:.4g}, Gamma={output.Gamma_hat:.4g}, DeltaR={output.DeltaR_hat:.4g}"
    )
    return output


@dataclass(frozen=True)
class HoldoutResult:
    b: float
    threshold: float
    feasible: bool
    monotone: bool
    discrepancies: Tuple[float, ...]


def holdout_B(
    l1_coeffs: Sequence[float],
    l2_coeffs: Callable[[float], Sequence[float]],
    b_grid: Sequence[float],
    quantile: Optional[float] = None,
    strict: bool = False,
) -> HoldoutResult:
    """
    Smallest grid b whose holdout discrepancy max |beta_l(b)| over L2 is at
    most the 95th percentile of |beta_l| over L1.

    A nonincreasing discrepancy is expected; violations are flagged, not
    raised. Without a feasible b the grid maximum is returned with
    ``feasible=False`` unless ``strict``.
    """
    quantile = app_settings.HOLDOUT_QUANTILE if quantile is None else quantile
    l1 = np.abs(np.asarray(l1_coeffs, dtype=float))
    if l1.size == 0:
        raise ValidationError("holdout split needs at least one L1 coefficient")
    grid = validate_grid(b_grid, "b_grid", ascending=True)
    threshold = float(np.quantile(l1, quantile))

    discrepancies = tuple(float(np.max(np.abs(np.asarray(l2_coeffs(b), dtype=float)))) for b in grid)
    monotone = all(b <= a + 1e-12 for a, b in zip(discrepancies, discrepancies[1:]))
    if not monotone:
        logger.warning("Holdout discrepancy is not nonincreasing in b")
    for b, value in zip(grid, discrepancies):
        if value <= threshold + 1e-12:
            return HoldoutResult(b, threshold, True, monotone, discrepancies)
    if strict:
        raise NoFeasibleB(
            "no grid value meets the holdout threshold",
            details={"threshold": threshold, "grid_max": grid[-1]},
        )
    logger.warning(f"No feasible B on the grid; returning grid max {grid[-1]}")
    return HoldoutResult(grid[-1], threshold, False, monotone, discrepancies)


# ====== BREAKDOWN FRONTIER ======

@dataclass(frozen=True)
class FrontierPoint:
    B: float
    DeltaR: float
    Gamma_star: float
    capped: bool


def breakdown_frontier(
    interval_fn: Optional[Callable[[float, float, float], Tuple[float, float]]],
    B: float,
    DeltaR: float,
    gamma_grid: Sequence[float],
    monitor_fn: Optional[Callable[[float, float, float], float]] = None,
    threshold: Optional[float] = None,
) -> FrontierPoint:
    """
    Smallest Gamma at which the conclusion breaks.

    Interval mode: first grid Gamma whose interval contains 0. Monitored
    mode: first crossing of ``threshold`` by ``monitor_fn``, linearly
    interpolated between the bracketing grid points. Without a crossing the
    grid maximum is returned as capped.
    """
    grid = validate_grid(gamma_grid, "gamma_grid", ascending=True)
    if monitor_fn is None:
        if interval_fn is None:
            raise ValidationError("breakdown_frontier needs an interval or a monitored function")
        for gamma in grid:
            lower, upper = interval_fn(B, gamma, DeltaR)
            if lower <= 0.0 <= upper:
                return FrontierPoint(B, DeltaR, gamma, False)
        return FrontierPoint(B, DeltaR, grid[-1], True)

    threshold = app_settings.FRONTIER_THRESHOLD if threshold is None else threshold
    values = [float(monitor_fn(B, gamma, DeltaR)) for gamma in grid]
    for j, (gamma, value) in enumerate(zip(grid, values)):
        if value >= threshold:
            if j == 0 or value == threshold:
                return FrontierPoint(B, DeltaR, gamma, False)
            g0, v0 = grid[j - 1], values[j - 1]
            star = g0 + (threshold - v0) * (gamma - g0) / (value - v0)
            return FrontierPoint(B, DeltaR, float(star), False)
    return FrontierPoint(B, DeltaR, grid[-1], True)


def dimensionless_breakdown(gamma_star: float, sigma_dy: float) -> float:
    """gamma* = Gamma* / sd(dY), comparable across outcomes."""
    sigma_dy = validate_nonnegative(sigma_dy, "sigma_dy")
    return math.nan if sigma_dy == 0 else gamma_star / sigma_dy


def frontier_frame(points: Sequence[FrontierPoint]) -> pd.DataFrame:
    return pd.DataFrame(
        [{"B": p.B, "DeltaR": p.DeltaR, "Gamma_star": p.Gamma_star, "capped_flag": int(p.capped)} for p in points],
        columns=["B", "DeltaR", "Gamma_star", "capped_flag"],
    )


# ====== SENSITIVITY REGIONS ======

class RegionInput(NamedTuple):
    coverage: Optional[float]
    length: float
    interval: Optional[Tuple[float, float]] = None


@dataclass(frozen=True)
class RegionCell:
    admissible: bool
    sign_stable: bool
    length: float


def _sign(interval: Optional[Tuple[float, float]]) -> int:
    if interval is None:
        return 0
    lower, upper = interval
    if lower > 0:
        return 1
    if upper < 0:
        return -1
    return 0


def sensitivity_region(
    results: Mapping[Triple, Sequence],
    coverage_floor: Optional[float] = None,
    length_cap: Optional[float] = None,
) -> Dict[Triple, RegionCell]:
    """
    Admissibility 1{coverage >= floor} 1{length <= cap * baseline length}.

    Cells without a coverage value (data analyses) use the length rule
    alone. A cell is sign-stable when its interval excludes zero with the
    baseline's sign.
    """
    coverage_floor = app_settings.COVERAGE_FLOOR if coverage_floor is None else coverage_floor
    length_cap = app_settings.LENGTH_CAP if length_cap is None else length_cap
    inputs = {tuple(float(v) for v in key): RegionInput(*value) for key, value in results.items()}
    baseline = inputs.get((0.0, 0.0, 0.0))
    if baseline is None:
        raise MissingBaseline("grid lacks the (0, 0, 0) baseline cell")
    baseline_sign = _sign(baseline.interval)

    region = {}
    for key, cell in inputs.items():
        covered = cell.coverage is None or cell.coverage >= coverage_floor
        short = cell.length <= length_cap * baseline.length
        sign = _sign(cell.interval)
        region[key] = RegionCell(
            admissible=bool(covered and short),
            sign_stable=bool(sign != 0 and sign == baseline_sign),
            length=float(cell.length),
        )
    return region


def region_frame(region: Mapping[Triple, RegionCell]) -> pd.DataFrame:
    rows = [
        {"B": b, "Gamma": g, "DeltaR": d, "admissible": int(c.admissible),
         "sign_stable": int(c.sign_stable), "length": c.length}
        for (b, g, d), c in sorted(region.items())
    ]
    return pd.DataFrame(rows, columns=["B", "Gamma", "DeltaR", "admissible", "sign_stable", "length"])


def is_down_set(region: Mapping[Triple, object]) -> bool:
    """Whether every cell below an admissible cell is admissible."""
    flags = {
        key: bool(value.admissible if isinstance(value, RegionCell) else value)
        for key, value in region.items()
    }
    for key, admissible in flags.items():
        if not admissible:
            continue
        for other, other_flag in flags.items():
            if not other_flag and all(o <= k for o, k in zip(other, key)):
                return False
    return True


# ====== GRID SELECTION ======

@dataclass(frozen=True)
class EmpiricalGrid:
    B: Tuple[float, ...]
    Gamma: Tuple[float, ...]
    DeltaR: Tuple[float, ...]

    def cells(self, include_baseline: bool = True):
        cells = [(b, g, d) for b in self.B for g in self.Gamma for d in self.DeltaR]
        if include_baseline and (0.0, 0.0, 0.0) not in cells:
            cells.insert(0, (0.0, 0.0, 0.0))
        return cells


def empirical_grid(
    M_pre: float,
    sigma_dy: float,
    delta_hat: float,
    c_B: Sequence[float] = (1.0, 2.0),
    gamma: Sequence[float] = (0.0, 0.25, 0.5, 1.0, 2.0),
    d: Sequence[float] = (0.0, 1.0, 2.0),
) -> EmpiricalGrid:
    """B = c_B M_pre, Gamma = gamma sd(dY), DeltaR = d delta_hat."""
    M_pre = validate_nonnegative(M_pre, "M_pre")
    sigma_dy = validate_nonnegative(sigma_dy, "sigma_dy")
    delta_hat = validate_nonnegative(delta_hat, "delta_hat")
    return EmpiricalGrid(
        B=tuple(c * M_pre for c in validate_grid(c_B, "c_B")),
        Gamma=tuple(g * sigma_dy for g in validate_grid(gamma, "gamma")),
        DeltaR=tuple(x * delta_hat for x in validate_grid(d, "d")),
    )


@dataclass(frozen=True)
class SelectionResult:
    triple: Triple
    objective: float
    feasible: Tuple[Triple, ...]


def select_restriction(
    candidates: Mapping[Triple, Tuple[float, float]],
    alpha: float = 0.05,
    h_bar: float = math.inf,
) -> SelectionResult:
    """
    Smallest (B, Gamma, DeltaR) whose placebo rejection rate is at most
    ``alpha`` and whose holdout discrepancy is at most ``h_bar``.

    Size is the sum of the coordinates, each divided by its grid maximum.
    """
    if not candidates:
        raise EmptyGrid("no candidate triples")
    keys = [tuple(float(v) for v in key) for key in candidates]
    maxima = [max(key[j] for key in keys) for j in range(3)]

    def size(key):
        return sum(key[j] / maxima[j] for j in range(3) if maxima[j] > 0)

    feasible = [
        key for key, (rate, discrepancy) in zip(keys, candidates.values())
        if rate <= alpha and discrepancy <= h_bar
    ]
    if not feasible:
        raise NoFeasibleB(
            "no grid triple passes the placebo and holdout screens",
            details={"alpha": alpha, "h_bar": h_bar},
        )
    best = min(feasible, key=lambda key: (size(key), key))
    return SelectionResult(best, float(size(best)), tuple(sorted(feasible)))
