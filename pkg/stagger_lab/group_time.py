# stagger_lab/group_time.py

"""
Heterogeneity-robust estimation from cohort-time cells.

GATT(g, t) compares the long difference Y_t - Y_{g-1} of cohort g with a
clean comparison group. Event-time effects are convex averages of these
cells; an imputation estimator is kept as a comparator.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .conf import app_settings
from .constants import NEVER, AggregationKind, ControlKind
from .exceptions import (
    DisconnectedUntreatedSample,
    EmptyControlSet,
    GapInPath,
    NoCohortsAtHorizon,
    PropensityOverlapFailure,
    ValidationError,
)
from .models import EventWindow, Panel, horizon_cohorts
from .regression import (
    fit_additive_effects,
    fit_logit,
    fit_multinomial,
    least_squares,
    logit_probabilities,
    twoway_demean,
)
from .utils import parallel_map

logger = logging.getLogger("stagger_lab")


# ====== CELLS ======

@dataclass(frozen=True, eq=False)
class GattEntry:
    """One GATT(g, t) estimate with its unit-level influence function."""

    g: int
    t: int
    estimate: float
    se: float
    n_treated: int
    n_control: int
    control_kind: ControlKind
    influence: np.ndarray = field(repr=False)

    @property
    def k(self) -> int:
        return self.t - self.g


@dataclass(frozen=True, eq=False)
class GattTable:
    entries: Dict[Tuple[int, int], GattEntry]
    control_kind: ControlKind
    n_units: int
    first_period: int = 1

    def cell(self, g: int, k: int) -> Optional[GattEntry]:
        return self.entries.get((g, g + k))

    def path(self, g: int) -> Dict[int, float]:
        """Event-time path k -> estimate of one cohort."""
        return {
            entry.k: entry.estimate
            for (cohort, _), entry in sorted(self.entries.items())
            if cohort == g
        }

    @property
    def cohorts(self) -> Tuple[int, ...]:
        return tuple(sorted({g for g, _ in self.entries}))

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "g": self.first_period + e.g - 1,
                "t": self.first_period + e.t - 1,
                "k": e.k,
                "estimate": e.estimate,
                "se": e.se,
                "n_treated": e.n_treated,
                "n_control": e.n_control,
                "control_kind": e.control_kind.value,
            }
            for _, e in sorted(self.entries.items())
        ]
        return pd.DataFrame(
            rows,
            columns=["g", "t", "k", "estimate", "se", "n_treated", "n_control", "control_kind"],
        )


def control_set(panel: Panel, g: int, t: int, kind=ControlKind.NEVER_TREATED) -> np.ndarray:
    """
    Comparison units for cell (g, t).

    Never-treated: G_i = NEVER. Not-yet-treated: G_i > t, NEVER included.
    """
    kind = ControlKind.parse(kind)
    if t < g:
        raise ValidationError(f"cell (g={g}, t={t}) precedes adoption")
    if kind == ControlKind.NEVER_TREATED:
        members = panel.never_mask
    else:
        members = panel.cohorts > t
    index = np.flatnonzero(members)
    if index.size == 0:
        raise EmptyControlSet(
            f"no {kind.value} units for cell (g={g}, t={t})",
            details={"g": g, "t": t, "control_kind": kind.value},
        )
    return index


def did_contrast(
    panel: Panel,
    treated: np.ndarray,
    controls: np.ndarray,
    t: int,
    base: int,
    control_weights: Optional[np.ndarray] = None,
):
    """
    Difference of mean changes Y_t - Y_base between two unit sets.

    ``control_weights`` (summing to one) replace the control mean. Returns
    (estimate, influence, n_treated, n_control) after dropping units with an
    unobserved outcome at t or base.
    """
    observed = panel.observed[:, t - 1] & panel.observed[:, base - 1]
    keep_t = observed[treated]
    keep_c = observed[controls]
    treated = treated[keep_t]
    controls = controls[keep_c]
    if treated.size == 0:
        raise ValidationError(f"no treated units observed at t={t} and base={base}")
    if controls.size == 0:
        raise EmptyControlSet(f"no comparison units observed at t={t} and base={base}")

    change = panel.outcomes[:, t - 1] - panel.outcomes[:, base - 1]
    mean_t = change[treated].mean()
    influence = np.zeros(panel.n)
    influence[treated] = (change[treated] - mean_t) / treated.size

    if control_weights is None:
        mean_c = change[controls].mean()
        influence[controls] = -(change[controls] - mean_c) / controls.size
    else:
        w = np.asarray(control_weights, dtype=float)[keep_c]
        w = w / w.sum()
        mean_c = float(w @ change[controls])
        influence[controls] = -w * (change[controls] - mean_c)
    return float(mean_t - mean_c), influence, int(treated.size), int(controls.size)


def _odds_weights(panel: Panel, treated: np.ndarray, controls: np.ndarray, base: int) -> np.ndarray:
    """Hajek-normalised propensity odds for the comparison units."""
    sample = np.concatenate([treated, controls])
    features = np.column_stack([np.ones(sample.size), panel.covariates[sample, base - 1, :]])
    labels = np.concatenate([np.ones(treated.size), np.zeros(controls.size)])
    coef = fit_logit(features, labels)
    p = logit_probabilities(features, coef)
    limit = 1.0 - app_settings.OVERLAP_CLIP
    if np.any(p >= limit):
        raise PropensityOverlapFailure(
            f"{int(np.sum(p >= limit))} propensities reach {limit}",
            details={"max_propensity": float(p.max())},
        )
    p_controls = p[treated.size:]
    odds = p_controls / (1.0 - p_controls)
    return odds / odds.sum()


def gatt_cell(
    panel: Panel,
    g: int,
    t: int,
    kind=ControlKind.NEVER_TREATED,
    use_propensity: bool = False,
) -> GattEntry:
    """
    Estimate GATT(g, t) against base period g - 1.

    With ``use_propensity`` the comparison units are reweighted by the odds
    of a logit of cohort membership on covariates at g - 1, fitted on the
    comparison sample. Weights are treated as fixed in the standard error.
    """
    kind = ControlKind.parse(kind)
    base = g - 1
    if base < 1:
        raise ValidationError(f"cohort {g} has no pre-period inside the panel")
    if not 1 <= t <= panel.T:
        raise ValidationError(f"period {t} is outside 1..{panel.T}")

    controls = control_set(panel, g, t, kind)
    treated = np.flatnonzero(panel.cohorts == g)
    observed = panel.observed[:, t - 1] & panel.observed[:, base - 1]

    weights = None
    if use_propensity:
        if not observed[controls].any():
            raise EmptyControlSet(f"no comparison units observed for cell (g={g}, t={t})")
        if not observed[treated].any():
            raise ValidationError(f"no cohort-{g} units observed for cell (g={g}, t={t})")
        weights = _odds_weights(panel, treated[observed[treated]], controls[observed[controls]], base)
        weights_full = np.zeros(controls.size)
        weights_full[observed[controls]] = weights
        weights = weights_full

    estimate, influence, n_t, n_c = did_contrast(panel, treated, controls, t, base, weights)
    se = float(np.sqrt(np.sum(influence ** 2)))
    return GattEntry(g, t, estimate, se, n_t, n_c, kind, influence)


def estimate_gatt_table(
    panel: Panel,
    kind=ControlKind.NEVER_TREATED,
    use_propensity: bool = False,
    cells: Optional[Iterable[Tuple[int, int]]] = None,
    threads: Optional[int] = None,
) -> GattTable:
    """
    Estimate every post cell (g, t), t >= g, of cohorts with a pre-period.

    Cells without comparison units are skipped with a warning.
    """
    kind = ControlKind.parse(kind)
    if cells is None:
        cells = [(g, t) for g in panel.cohort_values if g >= 2 for t in range(g, panel.T + 1)]
    cells = list(cells)

    def run(cell):
        try:
            return gatt_cell(panel, cell[0], cell[1], kind, use_propensity)
        except EmptyControlSet as exc:
            logger.warning(f"Skipping cell {cell}: {exc.message}")
            return None

    entries = {
        (e.g, e.t): e for e in parallel_map(run, cells, threads) if e is not None
    }
    logger.info(f"Estimated {len(entries)} of {len(cells)} group-time cells ({kind.value})")
    return GattTable(entries, kind, panel.n, panel.first_period)


# ====== AGGREGATION ======

@dataclass(frozen=True)
class AggregationScheme:
    """Convex cohort weights omega_g(k) for each horizon k."""

    kind: AggregationKind
    weights: Dict[int, Dict[int, float]]

    def at(self, k: int) -> Dict[int, float]:
        return self.weights.get(k, {})


def _cohort_masses(panel: Panel, kind: AggregationKind, population_shares=None) -> Dict[int, float]:
    if kind == AggregationKind.SAMPLE_SHARE:
        return {g: float(np.sum(panel.cohorts == g)) for g in panel.cohort_values}
    if kind == AggregationKind.POPULATION_SHARE:
        if population_shares is None:
            return {g: float(np.sum(panel.cohorts == g)) / panel.n for g in panel.cohort_values}
        shares = {int(g): float(s) for g, s in population_shares.items() if g != NEVER}
        if any(s < 0 for s in shares.values()):
            raise ValidationError("population shares must be >= 0")
        return {g: shares.get(g, 0.0) for g in panel.cohort_values}
    if panel.exposure is None:
        raise ValidationError("exposure aggregation needs exposure weights on the panel")
    return {g: float(panel.exposure[panel.cohorts == g].sum()) for g in panel.cohort_values}


def aggregation_scheme(
    panel: Panel,
    kind=AggregationKind.SAMPLE_SHARE,
    horizons: Optional[Iterable[int]] = None,
    population_shares: Optional[Mapping] = None,
) -> AggregationScheme:
    """
    Build omega_g(k) over G(k) for each horizon.

    Sample-share uses N_g, population-share uses the supplied shares (N_g / n
    when none are given) and exposure uses the cohort sum of exposure weights.
    """
    kind = AggregationKind.parse(kind)
    masses = _cohort_masses(panel, kind, population_shares)
    if horizons is None:
        horizons = range(0, panel.T)
    weights: Dict[int, Dict[int, float]] = {}
    for k in horizons:
        cohorts = [g for g in horizon_cohorts(k, panel.T, panel.cohort_values) if g >= 2]
        total = sum(masses[g] for g in cohorts)
        if total > 0:
            weights[k] = {g: masses[g] / total for g in cohorts if masses[g] > 0}
    return AggregationScheme(kind, weights)


@dataclass(frozen=True, eq=False)
class AggregateEstimate:
    k: int
    estimate: float
    se: float
    weights: Dict[int, float]
    influence: np.ndarray = field(repr=False)


def aggregate_event_time(table: GattTable, scheme: AggregationScheme, k: int) -> AggregateEstimate:
    """
    tau(k) = sum_g omega_g(k) tau_g(k).

    Cohorts without an estimated cell at k are dropped and the remaining
    weights renormalised.
    """
    declared = scheme.at(k)
    available = {g: w for g, w in declared.items() if table.cell(g, k) is not None}
    if not available:
        raise NoCohortsAtHorizon(
            f"no cohort has an estimated cell at k={k}",
            details={"k": k, "declared": sorted(declared)},
        )
    if len(available) < len(declared):
        missing = sorted(set(declared) - set(available))
        logger.warning(f"Horizon {k}: cohorts {missing} lack a cell; weights renormalised")
    total = sum(available.values())
    weights = {g: w / total for g, w in available.items()}

    estimate = 0.0
    influence = np.zeros(table.n_units)
    for g, w in sorted(weights.items()):
        entry = table.cell(g, k)
        estimate += w * entry.estimate
        influence += w * entry.influence
    return AggregateEstimate(k, float(estimate), float(np.sqrt(np.sum(influence ** 2))), weights, influence)


def aggregate_event_study(
    table: GattTable,
    scheme: AggregationScheme,
    horizons: Optional[Iterable[int]] = None,
) -> Dict[int, AggregateEstimate]:
    """Aggregate every horizon that has at least one estimated cell."""
    horizons = sorted(scheme.weights) if horizons is None else horizons
    results = {}
    for k in horizons:
        try:
            results[k] = aggregate_event_time(table, scheme, k)
        except NoCohortsAtHorizon:
            logger.debug(f"Horizon {k} has no estimated cells")
    return results


def aggregate_frame(estimates: Mapping[int, AggregateEstimate], scheme: AggregationScheme) -> pd.DataFrame:
    rows = [
        {"k": k, "estimate": e.estimate, "se": e.se, "scheme": scheme.kind.value}
        for k, e in sorted(estimates.items())
    ]
    return pd.DataFrame(rows, columns=["k", "estimate", "se", "scheme"])


def average_over_horizons(
    estimates: Mapping[int, AggregateEstimate], horizons: Iterable[int]
) -> Tuple[float, float]:
    """Equal-weight average of aggregated effects with its standard error."""
    chosen = [estimates[k] for k in horizons if k in estimates]
    if not chosen:
        raise NoCohortsAtHorizon(f"none of the horizons {list(horizons)} were estimated")
    influence = sum(e.influence for e in chosen) / len(chosen)
    estimate = sum(e.estimate for e in chosen) / len(chosen)
    return float(estimate), float(np.sqrt(np.sum(influence ** 2)))


# ====== IMPUTATION ======

def _untreated_connected(mask: np.ndarray) -> bool:
    """Whether the bipartite unit-period graph of ``mask`` is connected."""
    n, T = mask.shape
    rows, cols = np.nonzero(mask)
    graph = coo_matrix((np.ones(rows.size), (rows, n + cols)), shape=(n + T, n + T))
    count, _ = connected_components(graph, directed=False)
    return count == 1


@dataclass(frozen=True)
class ImputationResult:
    effects: Dict[int, float]
    counts: Dict[int, int]
    covariate_coefficients: Tuple[float, ...] = ()
    cell_effects: Dict[Tuple[int, int], float] = field(default_factory=dict)


def imputation_event_study(panel: Panel, window: EventWindow) -> ImputationResult:
    """
    Fit unit and period effects (plus linear covariates) on untreated cells,
    impute untreated outcomes on treated cells and average the residuals by
    event time. Only horizons k >= 0 are reported.
    """
    untreated = panel.observed & (panel.treatment == 0)
    if not _untreated_connected(untreated):
        raise DisconnectedUntreatedSample(
            "untreated cells do not connect every unit and period",
            details={
                "units_without_untreated_cells": int(np.sum(~untreated.any(axis=1))),
                "periods_without_untreated_cells": int(np.sum(~untreated.any(axis=0))),
            },
        )

    Y = np.where(panel.observed, panel.outcomes, 0.0)
    X = panel.covariates
    gamma = np.zeros(panel.n_covariates)
    if panel.n_covariates:
        Y_tilde = twoway_demean(Y, untreated).reshape(-1)
        X_tilde = twoway_demean(X, untreated).reshape(-1, panel.n_covariates)
        rows = untreated.reshape(-1)
        gamma = least_squares(X_tilde[rows], Y_tilde[rows]).coefficients
    net = Y - X @ gamma
    fit = fit_additive_effects(net, untreated)
    residual = net - fit.predict()

    treated_cells = panel.observed & (panel.treatment == 1)
    relative = panel.periods[None, :] - panel.cohorts[:, None]
    effects, counts, cell_effects = {}, {}, {}
    for k in window.horizons:
        if k < 0:
            continue
        cells = treated_cells & (relative == k)
        if cells.any():
            effects[k] = float(residual[cells].mean())
            counts[k] = int(cells.sum())
            for g in panel.cohort_values:
                in_cohort = cells & (panel.cohorts == g)[:, None]
                if in_cohort.any():
                    cell_effects[(g, k)] = float(residual[in_cohort].mean())
    logger.info(f"Imputation estimates for horizons {sorted(effects)}")
    return ImputationResult(effects, counts, tuple(float(c) for c in gamma), cell_effects)


# ====== CUMULATIVE EFFECTS ======

def cumulative_effects(tau_path: Mapping[int, float]) -> Dict[int, float]:
    """Running sums Delta(k) = sum_{j=0..k} tau(j) of a path that starts at 0."""
    horizons = sorted(k for k in tau_path if k >= 0)
    if not horizons or horizons != list(range(horizons[-1] + 1)):
        raise GapInPath(
            "event-time path must be contiguous from 0",
            details={"horizons": horizons},
        )
    running, result = 0.0, {}
    for k in horizons:
        running += float(tau_path[k])
        result[k] = running
    return result


# ====== OVERLAP SUMMARY ======

@dataclass(frozen=True)
class PropensitySummary:
    """Range of fitted cohort-membership probabilities per cohort."""

    classes: Tuple[float, ...]
    minimum: Tuple[float, ...]
    maximum: Tuple[float, ...]
    overlap_ok: bool

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "cohort": ["inf" if math.isinf(c) else int(c) for c in self.classes],
                "min_probability": self.minimum,
                "max_probability": self.maximum,
            }
        )


def cohort_propensities(panel: Panel, period: int = 1) -> PropensitySummary:
    """
    One-vs-rest multinomial logit of adoption cohort on covariates at
    ``period`` and the resulting overlap check.
    """
    features = np.column_stack([np.ones(panel.n), panel.covariates[:, period - 1, :]])
    fit = fit_multinomial(features, panel.cohorts)
    proba = fit.predict_proba(features)
    clip = app_settings.OVERLAP_CLIP
    overlap_ok = bool(np.all(proba > clip) and np.all(proba < 1.0 - clip))
    if not overlap_ok:
        logger.warning("Cohort propensities approach 0 or 1; overlap is weak")
    return PropensitySummary(
        classes=tuple(float(c) for c in fit.classes),
        minimum=tuple(float(v) for v in proba.min(axis=0)),
        maximum=tuple(float(v) for v in proba.max(axis=0)),
        overlap_ok=overlap_ok,
    )
