# stagger_lab/montecarlo/placebo.py

"""
Pre-trend placebo tests used by the simulation harness.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import chi2, norm

from ..constants import PLACEBO_ALPHAS, PlaceboVariant
from ..exceptions import EmptyControlSet, InsufficientPrePeriods, ValidationError
from ..group_time import did_contrast
from ..models import Panel
from ..sensitivity import critical_value

logger = logging.getLogger("stagger_lab")

PLACEBO_HORIZONS = (-3, -2, -1)


@dataclass(frozen=True, eq=False)
class PlaceboResult:
    """
    Outcome of one placebo test.

    ``statistic`` is the mean contrast for MC84-MEANS and the Wald statistic
    for MC81-WALD; ``rejections`` maps each level alpha to its decision.
    """

    variant: PlaceboVariant
    statistic: float
    se: float
    p_value: float
    df: int
    rejections: Dict[float, bool]
    components: Dict[int, float] = field(default_factory=dict)

    def rejects(self, alpha: float = 0.05) -> bool:
        return self.rejections[alpha]


# ====== MEANS CONTRAST ======

def _means_placebo(panel: Panel, alphas: Sequence[float]) -> PlaceboResult:
    """
    (mean Y_{3:4} - mean Y_{1:2}) treated minus control, rejecting when
    |tau| > z_{1-alpha/2} SE with SE = sqrt(var_T/n_T + var_C/n_C).
    """
    treated = panel.treated_mask
    if panel.T < 4 or (treated.any() and panel.cohorts[treated].min() <= 4):
        raise InsufficientPrePeriods(
            "the means placebo needs periods 1..4 before every adoption",
            details={"T": panel.T},
        )
    window = panel.observed[:, :4].all(axis=1)
    Y = panel.outcomes[:, :4]
    change = Y[:, 2:4].mean(axis=1) - Y[:, 0:2].mean(axis=1)
    arm_t = change[treated & window]
    arm_c = change[panel.never_mask & window]
    if arm_t.size < 2 or arm_c.size < 2:
        raise InsufficientPrePeriods(
            "each arm needs at least two units observed in periods 1..4",
            details={"treated": int(arm_t.size), "control": int(arm_c.size)},
        )
    estimate = float(arm_t.mean() - arm_c.mean())
    se = float(np.sqrt(arm_t.var(ddof=1) / arm_t.size + arm_c.var(ddof=1) / arm_c.size))
    z = abs(estimate) / se if se > 0 else np.inf
    return PlaceboResult(
        variant=PlaceboVariant.MC84_MEANS,
        statistic=estimate,
        se=se,
        p_value=float(2.0 * norm.sf(z)),
        df=1,
        rejections={a: bool(abs(estimate) > critical_value(a) * se) for a in alphas},
    )


# ====== POOLED WALD ======

def _wald_placebo(
    panel: Panel,
    weights: Mapping[int, float],
    alphas: Sequence[float],
) -> PlaceboResult:
    """
    Short-difference pre coefficients theta_{g,l} for l in {-3,-2,-1}
    against never-treated units, pooled across cohorts and tested jointly.

    A component whose base period precedes period 1 is skipped and the
    remaining cohort weights are renormalised. The covariance is that of the
    stacked unit influence functions.
    """
    controls = np.flatnonzero(panel.never_mask)
    if controls.size == 0:
        raise EmptyControlSet("the pooled placebo needs never-treated units")

    pooled, influences = {}, []
    for ell in PLACEBO_HORIZONS:
        total, estimate = 0.0, 0.0
        influence = np.zeros(panel.n)
        for g, w in sorted(weights.items()):
            t = g + ell
            if t - 1 < 1 or w <= 0:
                continue
            treated = np.flatnonzero(panel.cohorts == g)
            if treated.size == 0:
                continue
            value, psi, _, _ = did_contrast(panel, treated, controls, t, t - 1)
            estimate += w * value
            influence += w * psi
            total += w
        if total > 0:
            pooled[ell] = estimate / total
            influences.append(influence / total)

    if not pooled:
        raise InsufficientPrePeriods(
            "no cohort has a pre-period contrast at horizons -3..-1",
            details={"cohorts": sorted(weights)},
        )
    theta = np.array([pooled[ell] for ell in sorted(pooled)])
    psi = np.column_stack(influences)
    covariance = psi.T @ psi
    statistic = float(theta @ np.linalg.pinv(covariance) @ theta)
    df = theta.size
    p_value = float(chi2.sf(statistic, df))
    return PlaceboResult(
        variant=PlaceboVariant.MC81_WALD,
        statistic=statistic,
        se=float(np.sqrt(np.mean(np.diag(covariance)))),
        p_value=p_value,
        df=df,
        rejections={a: bool(p_value < a) for a in alphas},
        components=dict(pooled),
    )


def placebo_test(
    panel: Panel,
    variant,
    weights: Optional[Mapping[int, float]] = None,
    alphas: Sequence[float] = PLACEBO_ALPHAS,
) -> PlaceboResult:
    """
    Run a pre-trend placebo test.

    ``weights`` are the cohort weights of the pooled Wald variant and
    default to sample shares of the treated cohorts.
    """
    variant = PlaceboVariant.parse(variant)
    alphas = tuple(float(a) for a in alphas)
    if variant == PlaceboVariant.MC84_MEANS:
        return _means_placebo(panel, alphas)
    if weights is None:
        counts = {g: float(np.sum(panel.cohorts == g)) for g in panel.cohort_values}
        total = sum(counts.values())
        if total == 0:
            raise ValidationError("the pooled placebo needs at least one treated cohort")
        weights = {g: c / total for g, c in counts.items()}
    return _wald_placebo(panel, weights, alphas)


def placebo_rates(results: Sequence[PlaceboResult], alphas: Sequence[float] = PLACEBO_ALPHAS) -> Dict[float, float]:
    """Share of tests rejecting at each level."""
    if not results:
        return {float(a): float("nan") for a in alphas}
    return {
        float(a): float(np.mean([r.rejections[float(a)] for r in results])) for a in alphas
    }


def placebo_grid(rates: Mapping[Tuple[float, float], float]) -> Dict[float, Dict[float, float]]:
    """Regroup {(DeltaR, Gamma): rate} as rows by DeltaR, columns by Gamma."""
    table: Dict[float, Dict[float, float]] = {}
    for (delta, gamma), rate in sorted(rates.items()):
        table.setdefault(delta, {})[gamma] = rate
    return table
