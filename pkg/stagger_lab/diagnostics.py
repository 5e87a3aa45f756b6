# stagger_lab/diagnostics.py

"""
Design-risk indices of TWFE coefficients and their association with
realised distortion across replications.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from .exceptions import DegenerateVariance, ValidationError
from .models import EventWindow, Panel
from .regression import least_squares
from .twfe import WeightDecomposition, coefficient_weights, twfe_projection
from .utils import write_frame

logger = logging.getLogger("stagger_lab")


@dataclass(frozen=True)
class RiskIndices:
    """Negative, cross-horizon, absolute and signed weight mass at one horizon."""

    k: int
    negative_mass: float
    cross_horizon_mass: float
    absolute_mass: float
    signed_mass: float
    identified: bool = True

    @property
    def excess_mass(self) -> float:
        return self.absolute_mass - 1.0


def risk_indices(decomposition: WeightDecomposition) -> RiskIndices:
    """
    N(k) = sum |w| over negative weights, C(k) = sum |w| off the target
    horizon, A(k) = sum |w| and S(k) = sum w.
    """
    k = decomposition.target
    values = np.array([w for _, w in sorted(decomposition.weights.items())], dtype=float)
    horizons = np.array([kp for (_, kp) in sorted(decomposition.weights)], dtype=int)
    if values.size == 0:
        return RiskIndices(k, 0.0, 0.0, 0.0, 0.0)
    magnitude = np.abs(values)
    return RiskIndices(
        k=k,
        negative_mass=float(magnitude[values < 0].sum()),
        cross_horizon_mass=float(magnitude[horizons != k].sum()),
        absolute_mass=float(magnitude.sum()),
        signed_mass=float(values.sum()),
    )


@dataclass(frozen=True)
class DiagnosticsReport:
    rows: Tuple[RiskIndices, ...]

    def row(self, k: int) -> RiskIndices:
        for row in self.rows:
            if row.k == k:
                return row
        raise KeyError(k)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {"k": r.k, "N": r.negative_mass, "C": r.cross_horizon_mass,
                 "A": r.absolute_mass, "S": r.signed_mass, "identified_flag": int(r.identified)}
                for r in self.rows
            ],
            columns=["k", "N", "C", "A", "S", "identified_flag"],
        )

    def write_csv(self, path: Union[str, Path]) -> Path:
        return write_frame(self.to_frame(), path)


def diagnostics_report(
    panel: Panel,
    window: EventWindow,
    horizons: Optional[Iterable[int]] = None,
) -> DiagnosticsReport:
    """Risk indices for each estimated horizon; dropped horizons are flagged."""
    projection = twfe_projection(panel, window)
    horizons = window.estimated if horizons is None else tuple(horizons)
    rows = []
    for k in horizons:
        if k not in projection.retained:
            nan = math.nan
            rows.append(RiskIndices(k, nan, nan, nan, nan, identified=False))
            continue
        rows.append(risk_indices(coefficient_weights(panel, window, k, projection)))
    logger.info(f"Computed design diagnostics for {len(rows)} horizons")
    return DiagnosticsReport(tuple(rows))


# ====== DISTORTION ASSOCIATION ======

@dataclass(frozen=True)
class DistortionAssociation:
    """
    Pearson correlations of N(k) and C(k) with Dist(k), and the joint OLS
    of Dist on (1, N, C).
    """

    corr_negative: float
    corr_cross: float
    intercept: float
    slope_negative: float
    slope_cross: float
    replications: int
    degenerate: bool = False


def distortion_association(
    replications: Sequence[Tuple[float, float, float]],
) -> DistortionAssociation:
    """
    Associate design risk with distortion across replications.

    A constant distortion column reports zero correlations with
    ``degenerate=True``; a constant risk index raises DegenerateVariance.
    """
    data = np.asarray(replications, dtype=float)
    if data.ndim != 2 or data.shape[1] != 3:
        raise ValidationError("replications must be (N, C, Dist) triples")
    if data.shape[0] < 3:
        raise ValidationError(f"need at least 3 replications, got {data.shape[0]}")
    if not np.all(np.isfinite(data)):
        raise ValidationError("replications contain non-finite values")

    negative, cross, distortion = data.T
    for name, column in (("N", negative), ("C", cross)):
        if np.ptp(column) == 0.0:
            raise DegenerateVariance(
                f"index {name} is constant across {data.shape[0]} replications",
                details={"index": name, "value": float(column[0])},
            )

    design = np.column_stack([np.ones(len(data)), negative, cross])
    coefficients = least_squares(design, distortion).coefficients

    if np.ptp(distortion) == 0.0:
        logger.warning("Distortion is constant across replications; correlations set to 0")
        return DistortionAssociation(0.0, 0.0, *map(float, coefficients), len(data), degenerate=True)

    corr_negative = stats.pearsonr(negative, distortion)[0]
    corr_cross = stats.pearsonr(cross, distortion)[0]
    return DistortionAssociation(
        float(corr_negative), float(corr_cross), *map(float, coefficients), len(data)
    )
