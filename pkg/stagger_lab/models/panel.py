# stagger_lab/models/panel.py

"""
Staggered-adoption panel model.

A ``Panel`` is a rectangular unit-by-period array. Periods are indexed 1..T
internally; ``first_period`` maps them back to calendar labels. Adoption
times live on the same 1..T scale with ``NEVER`` (infinity) for units that
are never treated.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Hashable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..constants import NEVER
from ..exceptions import (
    DuplicateCell,
    EmptyPanel,
    EmptyWindow,
    InputNotFound,
    NonMonotoneTreatment,
    ValidationError,
)
from ..validators import validate_exposure

logger = logging.getLogger("stagger_lab")


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class PanelRow:
    """One (unit, time) record as read from a file or generator."""

    unit: Hashable
    time: int
    outcome: float
    cohort: float
    covariates: Tuple[float, ...] = ()
    exposure: Optional[float] = None
    observed: Optional[bool] = None
    treated: Optional[int] = None


@dataclass(frozen=True, eq=False)
class Panel:
    """
    Immutable staggered-adoption panel.

    Attributes:
        outcomes: n x T outcomes, NaN where the cell is unobserved
        cohorts: length-n adoption periods in 1..T, or NEVER
        covariates: n x T x d covariates (time-invariant ones are constant in t)
        exposure: optional nonnegative unit weights
        observed: n x T selection mask
        unit_ids: original unit labels in row order
        first_period: calendar label of period 1
    """

    outcomes: np.ndarray
    cohorts: np.ndarray
    covariates: np.ndarray = None
    exposure: Optional[np.ndarray] = None
    observed: np.ndarray = None
    unit_ids: Tuple[Hashable, ...] = None
    first_period: int = 1
    _cache: Dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        outcomes = np.asarray(self.outcomes, dtype=float)
        if outcomes.ndim != 2 or outcomes.size == 0:
            raise EmptyPanel("outcomes must be a non-empty n x T matrix")
        n, T = outcomes.shape

        cohorts = np.asarray(self.cohorts, dtype=float)
        if cohorts.shape != (n,):
            raise ValidationError(f"cohorts must have length {n}")
        finite = np.isfinite(cohorts)
        if np.any(np.isneginf(cohorts)) or np.any(np.isnan(cohorts)):
            raise ValidationError("cohorts must be adoption periods or NEVER")
        bad = finite & ((cohorts < 1) | (cohorts > T) | (cohorts != np.round(cohorts)))
        if np.any(bad):
            raise ValidationError(
                f"adoption periods must be integers in 1..{T}",
                details={"units": np.flatnonzero(bad).tolist()[:10]},
            )

        covariates = self.covariates
        if covariates is None:
            covariates = np.zeros((n, T, 0))
        covariates = np.asarray(covariates, dtype=float)
        if covariates.ndim == 2 and covariates.shape == (n, T):
            covariates = covariates[:, :, None]
        if covariates.shape[:2] != (n, T) or covariates.ndim != 3:
            raise ValidationError(f"covariates must be n x T x d with n={n}, T={T}")

        observed = self.observed
        if observed is None:
            observed = ~np.isnan(outcomes)
        observed = np.asarray(observed, dtype=bool)
        if observed.shape != (n, T):
            raise ValidationError("observed mask must match outcomes")
        if np.any(np.isnan(outcomes) & observed):
            raise ValidationError("observed cells must carry a finite outcome")
        outcomes = np.where(observed, outcomes, np.nan)

        exposure = self.exposure
        if exposure is not None:
            exposure = validate_exposure(exposure)
            if exposure.shape != (n,):
                raise ValidationError(f"exposure must have length {n}")

        unit_ids = self.unit_ids
        if unit_ids is None:
            unit_ids = tuple(range(1, n + 1))
        unit_ids = tuple(unit_ids)
        if len(unit_ids) != n:
            raise ValidationError("unit_ids must have one label per row")

        object.__setattr__(self, "outcomes", _readonly(outcomes))
        object.__setattr__(self, "cohorts", _readonly(cohorts))
        object.__setattr__(self, "covariates", _readonly(covariates))
        object.__setattr__(self, "observed", _readonly(observed))
        object.__setattr__(
            self, "exposure", None if exposure is None else _readonly(exposure)
        )
        object.__setattr__(self, "unit_ids", unit_ids)

    # ====== SHAPE ======

    @property
    def n(self) -> int:
        return self.outcomes.shape[0]

    @property
    def T(self) -> int:
        return self.outcomes.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[2]

    @property
    def periods(self) -> np.ndarray:
        return np.arange(1, self.T + 1)

    # ====== TREATMENT ======

    @property
    def never_mask(self) -> np.ndarray:
        return ~np.isfinite(self.cohorts)

    @property
    def treated_mask(self) -> np.ndarray:
        return np.isfinite(self.cohorts)

    @property
    def treatment(self) -> np.ndarray:
        """Absorbing indicator D_it = 1{G_i <= t} for treated units."""
        if "treatment" not in self._cache:
            D = (self.cohorts[:, None] <= self.periods[None, :]) & self.treated_mask[:, None]
            self._cache["treatment"] = _readonly(D.astype(np.int8))
        return self._cache["treatment"]

    @property
    def cohort_values(self) -> Tuple[int, ...]:
        """Sorted adoption periods present among treated units."""
        return tuple(int(g) for g in np.unique(self.cohorts[self.treated_mask]))

    def cohort_mask(self, g) -> np.ndarray:
        if g == NEVER:
            return self.never_mask
        return self.cohorts == g

    def is_balanced(self) -> bool:
        return bool(self.observed.all())

    def calendar_time(self, t: int) -> int:
        return self.first_period + int(t) - 1

    # ====== DERIVED PANELS ======

    def subset(self, units: Sequence[int]) -> "Panel":
        """Panel restricted to the given row indices, in the given order."""
        idx = np.asarray(units, dtype=int)
        if idx.size == 0:
            raise EmptyPanel("subset selects no units")
        return Panel(
            outcomes=self.outcomes[idx],
            cohorts=self.cohorts[idx],
            covariates=self.covariates[idx],
            exposure=None if self.exposure is None else self.exposure[idx],
            observed=self.observed[idx],
            unit_ids=tuple(self.unit_ids[i] for i in idx),
            first_period=self.first_period,
        )

    def with_outcomes(self, outcomes: np.ndarray) -> "Panel":
        """Same design and covariates, new outcome matrix."""
        outcomes = np.where(self.observed, np.asarray(outcomes, dtype=float), np.nan)
        return Panel(
            outcomes=outcomes,
            cohorts=self.cohorts,
            covariates=self.covariates,
            exposure=self.exposure,
            observed=self.observed,
            unit_ids=self.unit_ids,
            first_period=self.first_period,
        )

    @classmethod
    def from_arrays(
        cls,
        outcomes,
        cohorts,
        covariates=None,
        exposure=None,
        observed=None,
        unit_ids=None,
        first_period: int = 1,
    ) -> "Panel":
        """Build a panel whose cohorts are given as calendar periods."""
        cohorts = np.asarray(cohorts, dtype=float)
        shifted = np.where(np.isfinite(cohorts), cohorts - first_period + 1, NEVER)
        return cls(
            outcomes=outcomes,
            cohorts=shifted,
            covariates=covariates,
            exposure=exposure,
            observed=observed,
            unit_ids=unit_ids,
            first_period=first_period,
        )


# ====== EVENT WINDOW ======

@dataclass(frozen=True)
class EventWindow:
    """
    Ordered set of relative times K with the omitted baseline k0.
    """

    horizons: Tuple[int, ...]
    baseline: int = -1

    def __post_init__(self):
        horizons = tuple(sorted({int(k) for k in self.horizons}))
        object.__setattr__(self, "horizons", horizons)
        if int(self.baseline) not in horizons:
            raise ValidationError(
                f"baseline {self.baseline} must belong to the window {list(horizons)}"
            )
        object.__setattr__(self, "baseline", int(self.baseline))
        if len(horizons) < 2:
            raise EmptyWindow("window needs at least one horizon besides the baseline")

    @property
    def estimated(self) -> Tuple[int, ...]:
        """Horizons that receive a regression column."""
        return tuple(k for k in self.horizons if k != self.baseline)

    @classmethod
    def between(cls, lower: int, upper: int, baseline: int = -1) -> "EventWindow":
        return cls(tuple(range(int(lower), int(upper) + 1)), baseline)

    @classmethod
    def full(cls, panel: Panel, baseline: int = -1) -> "EventWindow":
        """Every event time realised by a treated cell of ``panel``."""
        cohorts = panel.cohort_values
        if not cohorts:
            return cls((baseline, baseline + 1), baseline)
        lower = min(1 - g for g in cohorts)
        upper = max(panel.T - g for g in cohorts)
        horizons = set(range(lower, upper + 1)) | {baseline}
        return cls(tuple(horizons), baseline)


# ====== EVENT INDEX ======

def cohort_horizons(g: int, T: int) -> Tuple[int, ...]:
    """K_g = {-g+1, ..., T-g}."""
    return tuple(range(-int(g) + 1, int(T) - int(g) + 1))


def horizon_cohorts(k: int, T: int, cohorts: Optional[Iterable[int]] = None) -> Tuple[int, ...]:
    """G(k) = {g : 1 <= g + k <= T}, over 1..T unless cohorts are given."""
    candidates = range(1, int(T) + 1) if cohorts is None else cohorts
    return tuple(int(g) for g in candidates if 1 <= int(g) + int(k) <= int(T))


@dataclass(frozen=True)
class EventIndex:
    relative_time: np.ndarray
    cohort_horizons: Dict[int, Tuple[int, ...]]
    horizon_cohorts: Dict[int, Tuple[int, ...]]

    def cells(self, g: int, k: int, panel: Panel) -> np.ndarray:
        """Row indices of cohort-g units observed at event time k."""
        t = g + k
        if not 1 <= t <= panel.T:
            return np.zeros(0, dtype=int)
        return np.flatnonzero(panel.cohort_mask(g) & panel.observed[:, t - 1])


def event_index(window: EventWindow, panel: Panel) -> EventIndex:
    """
    Map treated cells to event time k = t - G_i.

    Never-treated units map to NaN and belong to no cohort set.
    """
    relative = panel.periods[None, :] - panel.cohorts[:, None]
    relative = np.where(panel.treated_mask[:, None], relative, np.nan)
    by_cohort = {g: cohort_horizons(g, panel.T) for g in panel.cohort_values}
    by_horizon = {k: horizon_cohorts(k, panel.T, panel.cohort_values) for k in window.horizons}
    return EventIndex(_readonly(relative), by_cohort, by_horizon)


# ====== DESIGN SUMMARY ======

@dataclass(frozen=True)
class DesignSummary:
    counts: Dict[float, int]
    shares: Dict[float, float]
    prevalence: Tuple[float, ...]


def design_summary(panel: Panel) -> DesignSummary:
    """Cohort counts N_g, shares p_g and the prevalence path D_t."""
    counts: Dict[float, int] = {g: int(np.sum(panel.cohorts == g)) for g in panel.cohort_values}
    n_never = int(panel.never_mask.sum())
    if n_never:
        counts[NEVER] = n_never
    shares = {g: c / panel.n for g, c in counts.items()}
    prevalence = tuple(float(v) for v in panel.treatment.mean(axis=0))
    return DesignSummary(counts, shares, prevalence)


# ====== CONSTRUCTION FROM ROWS ======

def _parse_cohort(value) -> float:
    if isinstance(value, str):
        text = value.strip().lower()
        if text in {"inf", "+inf", "never", "infinity"}:
            return NEVER
        value = float(text)
    value = float(value)
    if math.isnan(value):
        raise ValidationError("cohort cannot be missing; use 'inf' for never-treated")
    return value


def build_panel(rows: Iterable[PanelRow], min_pre: int = 1, min_post: int = 1) -> Panel:
    """
    Assemble and validate a panel from row records.

    Treated units with fewer than ``min_pre`` pre-periods or ``min_post``
    post-periods are trimmed. Cells absent from ``rows`` are accepted only
    when rows carry an explicit observed flag.
    """
    rows = list(rows)
    if not rows:
        raise EmptyPanel("no rows supplied")

    unit_index: Dict[Hashable, int] = {}
    for row in rows:
        unit_index.setdefault(row.unit, len(unit_index))
    times = sorted({int(row.time) for row in rows})
    first, last = times[0], times[-1]
    missing_times = sorted(set(range(first, last + 1)) - set(times))
    if missing_times:
        raise ValidationError(
            "periods without any rows", details={"times": missing_times}
        )
    n, T = len(unit_index), last - first + 1

    d = len(rows[0].covariates)
    mask_supplied = any(row.observed is not None for row in rows)
    treat_supplied = any(row.treated is not None for row in rows)

    outcomes = np.full((n, T), np.nan)
    covariates = np.zeros((n, T, d))
    observed = np.zeros((n, T), dtype=bool)
    seen = np.zeros((n, T), dtype=bool)
    treated = np.full((n, T), -1, dtype=int)
    cohorts: List[Optional[float]] = [None] * n
    exposure: List[Optional[float]] = [None] * n

    for row in rows:
        i, t = unit_index[row.unit], int(row.time) - first
        if seen[i, t]:
            raise DuplicateCell(
                f"unit {row.unit!r} repeated at time {row.time}",
                details={"unit": str(row.unit), "time": int(row.time)},
            )
        seen[i, t] = True
        if len(row.covariates) != d:
            raise ValidationError(f"unit {row.unit!r} has {len(row.covariates)} covariates, expected {d}")

        cohort = _parse_cohort(row.cohort)
        if cohorts[i] is None:
            cohorts[i] = cohort
        elif cohorts[i] != cohort:
            raise ValidationError(f"unit {row.unit!r} has more than one cohort")
        if row.exposure is not None:
            if exposure[i] is not None and exposure[i] != row.exposure:
                raise ValidationError(f"unit {row.unit!r} has more than one exposure weight")
            exposure[i] = float(row.exposure)

        is_observed = True if row.observed is None else bool(row.observed)
        if is_observed:
            if row.outcome is None or not math.isfinite(float(row.outcome)):
                raise ValidationError(f"observed cell ({row.unit!r}, {row.time}) lacks an outcome")
            outcomes[i, t] = float(row.outcome)
        observed[i, t] = is_observed
        covariates[i, t] = row.covariates
        if treat_supplied:
            if row.treated is None:
                raise ValidationError("treatment column must be supplied on every row")
            treated[i, t] = int(row.treated)

    if not mask_supplied and not seen.all():
        gaps = np.argwhere(~seen)[:5]
        raise ValidationError(
            "panel has missing periods and no observed mask",
            details={"cells": [[str(list(unit_index)[i]), int(t) + first] for i, t in gaps]},
        )

    cohort_arr = np.empty(n)
    for i, cohort in enumerate(cohorts):
        if math.isfinite(cohort):
            if cohort != round(cohort) or not first <= cohort <= last:
                raise ValidationError(
                    f"cohort {cohort} of unit {list(unit_index)[i]!r} lies outside {first}..{last}"
                )
            cohort_arr[i] = cohort - first + 1
        else:
            cohort_arr[i] = NEVER

    if treat_supplied:
        periods = np.arange(1, T + 1)
        implied = (cohort_arr[:, None] <= periods[None, :]) & np.isfinite(cohort_arr)[:, None]
        for i in range(n):
            path = treated[i][seen[i]]
            if np.any(np.diff(path) < 0):
                raise NonMonotoneTreatment(
                    f"unit {list(unit_index)[i]!r} leaves treatment",
                    details={"path": path.tolist()},
                )
            if np.any(path != implied[i][seen[i]]):
                raise NonMonotoneTreatment(
                    f"treatment path of unit {list(unit_index)[i]!r} contradicts its cohort"
                )

    if any(e is not None for e in exposure):
        if any(e is None for e in exposure):
            raise ValidationError("exposure must be given for every unit or none")
        exposure_arr = np.asarray(exposure, dtype=float)
    else:
        exposure_arr = None

    keep = np.ones(n, dtype=bool)
    finite = np.isfinite(cohort_arr)
    keep[finite] = (cohort_arr[finite] - 1 >= min_pre) & (T - cohort_arr[finite] + 1 >= min_post)
    if not keep.all():
        logger.warning(
            f"Trimmed {int((~keep).sum())} treated units without "
            f"{min_pre} pre-period(s) and {min_post} post-period(s)"
        )
    if not keep.any():
        raise EmptyPanel("every unit was trimmed")

    idx = np.flatnonzero(keep)
    ids = list(unit_index)
    panel = Panel(
        outcomes=outcomes[idx],
        cohorts=cohort_arr[idx],
        covariates=covariates[idx],
        exposure=None if exposure_arr is None else exposure_arr[idx],
        observed=observed[idx],
        unit_ids=tuple(ids[i] for i in idx),
        first_period=first,
    )
    logger.debug(f"Built panel with n={panel.n}, T={panel.T}, cohorts={panel.cohort_values}")
    return panel


# ====== CSV ======

def panel_to_frame(panel: Panel) -> pd.DataFrame:
    """Long-format frame: unit,time,outcome,cohort[,x1..xd][,exposure][,observed]."""
    n, T = panel.n, panel.T
    frame = pd.DataFrame(
        {
            "unit": np.repeat(np.array(panel.unit_ids, dtype=object), T),
            "time": np.tile(np.arange(panel.first_period, panel.first_period + T), n),
            "outcome": panel.outcomes.reshape(-1),
            "cohort": np.repeat(
                [
                    "inf" if not math.isfinite(g) else str(panel.calendar_time(int(g)))
                    for g in panel.cohorts
                ],
                T,
            ),
        }
    )
    for j in range(panel.n_covariates):
        frame[f"x{j + 1}"] = panel.covariates[:, :, j].reshape(-1)
    if panel.exposure is not None:
        frame["exposure"] = np.repeat(panel.exposure, T)
    if not panel.is_balanced():
        frame["observed"] = panel.observed.reshape(-1).astype(int)
    return frame


def panel_from_frame(frame: pd.DataFrame, min_pre: int = 1, min_post: int = 1) -> Panel:
    required = ["unit", "time", "outcome", "cohort"]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ValidationError(f"panel CSV lacks columns {missing}")
    x_cols = sorted(
        (c for c in frame.columns if c.startswith("x") and c[1:].isdigit()),
        key=lambda c: int(c[1:]),
    )
    has_exposure = "exposure" in frame.columns
    has_observed = "observed" in frame.columns
    has_treated = "treated" in frame.columns

    rows = []
    for record in frame.to_dict("records"):
        observed = bool(int(record["observed"])) if has_observed else None
        outcome = record["outcome"]
        rows.append(
            PanelRow(
                unit=record["unit"],
                time=int(record["time"]),
                outcome=None if pd.isna(outcome) else float(outcome),
                cohort=_parse_cohort(str(record["cohort"])),
                covariates=tuple(float(record[c]) for c in x_cols),
                exposure=float(record["exposure"]) if has_exposure else None,
                observed=observed,
                treated=int(record["treated"]) if has_treated else None,
            )
        )
    return build_panel(rows, min_pre=min_pre, min_post=min_post)


def read_panel_csv(path: Union[str, Path], min_pre: int = 1, min_post: int = 1) -> Panel:
    path = Path(path)
    if not path.exists():
        raise InputNotFound(f"panel file not found: {path}", details={"path": str(path)})
    frame = pd.read_csv(path, dtype={"cohort": str})
    return panel_from_frame(frame, min_pre=min_pre, min_post=min_post)


def write_panel_csv(panel: Panel, path: Union[str, Path], float_format: str = "%.17g") -> Path:
    path = Path(path)
    panel_to_frame(panel).to_csv(path, index=False, float_format=float_format, lineterminator="\n")
    return path
