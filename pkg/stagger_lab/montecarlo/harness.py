# stagger_lab/montecarlo/harness.py

"""
Replication loop and cell metrics.

Every replication r draws its panel from a PCG64 stream seeded by
(base_seed, r) alone, so cells of a grid share common random numbers and
results do not depend on the thread count.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..conf import app_settings
from ..constants import PLACEBO_ALPHAS, Design, EstimatorKind, PlaceboVariant
from ..diagnostics import risk_indices
from ..exceptions import CellFailed, StaggerLabError, ValidationError
from ..group_time import aggregation_scheme, estimate_gatt_table, imputation_event_study
from ..models import EventWindow, Panel
from ..orthogonal import crossfit_table
from ..sensitivity import FrontierPoint, bias_bound, breakdown_frontier, robust_interval
from ..twfe import coefficient_weights, twfe_event_coeffs, twfe_projection
from ..utils import derive_seed, parallel_map, replication_rng
from .dgp import DgpSpec, TrueTargets, benchmark_targets, simulate
from .placebo import PlaceboResult, placebo_grid, placebo_rates, placebo_test

logger = logging.getLogger("stagger_lab")

Cell = Tuple[int, int]


# ====== PER-REPLICATION ESTIMATES ======

@dataclass(frozen=True)
class EstimateDraw:
    """Pooled estimate of one replication with its cohort-horizon parts."""

    estimate: float
    se: float
    components: Dict[Cell, Tuple[float, float]] = field(default_factory=dict)
    distortion: Optional[Tuple[float, float, float]] = None


@dataclass(frozen=True)
class ReplicationRecord:
    index: int
    draws: Dict[EstimatorKind, Optional[EstimateDraw]]
    placebo: Optional[PlaceboResult]


def _pool(table, targets: TrueTargets) -> EstimateDraw:
    """sum_g w_g mean_ell theta_hat_{g,ell} with its influence-function SE."""
    estimate = 0.0
    influence = np.zeros(table.n_units)
    components = {}
    for g, w in sorted(targets.weights.items()):
        horizons = targets.observable[g]
        for ell in horizons:
            entry = table.cell(g, ell)
            if entry is None:
                raise ValidationError(f"cell (g={g}, ell={ell}) was not estimated")
            components[(g, ell)] = (entry.estimate, entry.se)
            estimate += w * entry.estimate / len(horizons)
            influence += w * entry.influence / len(horizons)
    return EstimateDraw(float(estimate), float(np.sqrt(np.sum(influence ** 2))), components)


def _target_cells(targets: TrueTargets) -> List[Cell]:
    return [(g, g + ell) for g in sorted(targets.weights) for ell in targets.observable[g]]


def _twfe_draw(panel: Panel, targets: TrueTargets, dist_horizon: int) -> EstimateDraw:
    """
    Equal-weight average of the TWFE coefficients over the pooled horizons,
    plus the (N, C, Dist) triple at ``dist_horizon`` against the sample-share
    aggregate of the true effects.
    """
    window = EventWindow.full(panel)
    projection = twfe_projection(panel, window)
    result = twfe_event_coeffs(panel, window, projection)
    horizons = sorted({ell for hs in targets.observable.values() for ell in hs})
    estimate, se = result.combination({ell: 1.0 / len(horizons) for ell in horizons})

    distortion = None
    if dist_horizon in projection.retained:
        indices = risk_indices(coefficient_weights(panel, window, dist_horizon, projection))
        scheme = aggregation_scheme(panel, horizons=[dist_horizon]).at(dist_horizon)
        truth = sum(w * targets.cells.get((g, dist_horizon), 0.0) for g, w in scheme.items())
        distortion = (
            indices.negative_mass,
            indices.cross_horizon_mass,
            result.coefficient(dist_horizon) - truth,
        )
    return EstimateDraw(estimate, se, {}, distortion)


def _imputation_draw(panel: Panel, targets: TrueTargets) -> EstimateDraw:
    result = imputation_event_study(panel, EventWindow.full(panel))
    estimate = 0.0
    components = {}
    for g, w in sorted(targets.weights.items()):
        horizons = targets.observable[g]
        for ell in horizons:
            value = result.cell_effects[(g, ell)]
            components[(g, ell)] = (value, math.nan)
            estimate += w * value / len(horizons)
    return EstimateDraw(float(estimate), math.nan, components)


def _estimate(kind: EstimatorKind, panel: Panel, targets: TrueTargets, seed: int, dist_horizon: int) -> EstimateDraw:
    if kind == EstimatorKind.TWFE:
        return _twfe_draw(panel, targets, dist_horizon)
    if kind == EstimatorKind.GROUP_TIME:
        return _pool(estimate_gatt_table(panel, cells=_target_cells(targets), threads=1), targets)
    if kind == EstimatorKind.DR_CROSSFIT:
        return _pool(crossfit_table(panel, seed=seed, cells=_target_cells(targets), threads=1), targets)
    return _imputation_draw(panel, targets)


def placebo_variant(spec: DgpSpec) -> PlaceboVariant:
    if spec.design == Design.MC84_SMALL:
        return PlaceboVariant.MC84_MEANS
    return PlaceboVariant.MC81_WALD


def replicate(
    spec: DgpSpec,
    estimators: Sequence[EstimatorKind],
    base_seed: int,
    index: int,
    dist_horizon: int = 0,
) -> ReplicationRecord:
    """Simulate replication ``index`` and run every estimator on it."""
    targets = benchmark_targets(spec)
    panel = simulate(spec, replication_rng(base_seed, index))
    fold_seed = int(derive_seed(base_seed, index, 1).generate_state(1)[0])

    draws = {}
    for kind in estimators:
        try:
            draws[kind] = _estimate(kind, panel, targets, fold_seed, dist_horizon)
        except (StaggerLabError, np.linalg.LinAlgError) as exc:
            logger.warning(f"Replication {index}: {kind.value} failed ({type(exc).__name__}: {exc})")
            draws[kind] = None

    try:
        placebo = placebo_test(panel, placebo_variant(spec), weights=targets.weights)
    except (StaggerLabError, np.linalg.LinAlgError) as exc:
        logger.warning(f"Replication {index}: placebo failed ({type(exc).__name__}: {exc})")
        placebo = None
    return ReplicationRecord(index, draws, placebo)


# ====== METRICS ======

@dataclass(frozen=True)
class ComponentMetrics:
    bias: float
    rmse: float
    coverage: float


@dataclass(frozen=True, eq=False)
class CellMetrics:
    """
    Monte Carlo summary of one estimator at one violation cell.

    Interval metrics refer to the robust interval at level 0.05, which equals
    the Wald interval at the null cell; ``coverage_wald`` is reported
    alongside. ``admissible`` is filled by the grid runner.
    """

    estimator: EstimatorKind
    cell: Tuple[float, float, float]
    replications: int
    failures: int
    theta_true: float
    bias: float
    variance: float
    rmse: float
    medae: float
    coverage: float
    coverage_wald: float
    length: float
    utex: float
    rejpre: Dict[float, float]
    placebo_failures: int = 0
    admissible: Optional[bool] = None
    components: Dict[Cell, ComponentMetrics] = field(default_factory=dict, repr=False)
    distortion: Tuple[Tuple[float, float, float], ...] = field(default=(), repr=False)

    def with_admissible(self, value: Optional[bool]) -> "CellMetrics":
        return replace(self, admissible=value)

    def to_row(self) -> Dict[str, object]:
        DeltaR, B, Gamma = self.cell
        row = {
            "estimator": self.estimator.value,
            "DeltaR": DeltaR,
            "B": B,
            "Gamma": Gamma,
            "R": self.replications,
            "failures": self.failures,
            "bias": self.bias,
            "rmse": self.rmse,
            "medae": self.medae,
            "cov": self.coverage,
            "cov_wald": self.coverage_wald,
            "len": self.length,
            "utex": self.utex,
        }
        for alpha in PLACEBO_ALPHAS:
            row[f"rejpre_{alpha:g}"] = self.rejpre.get(alpha, math.nan)
        row["admissible"] = math.nan if self.admissible is None else int(self.admissible)
        return row

    def to_dict(self) -> Dict[str, object]:
        """JSON-safe form used to ship metrics back from a worker."""
        return {
            "estimator": self.estimator.value,
            "cell": list(self.cell),
            "replications": self.replications,
            "failures": self.failures,
            "theta_true": self.theta_true,
            "bias": self.bias,
            "variance": self.variance,
            "rmse": self.rmse,
            "medae": self.medae,
            "coverage": self.coverage,
            "coverage_wald": self.coverage_wald,
            "length": self.length,
            "utex": self.utex,
            "rejpre": {str(a): r for a, r in self.rejpre.items()},
            "placebo_failures": self.placebo_failures,
            "admissible": self.admissible,
            "components": [
                [g, ell, c.bias, c.rmse, c.coverage] for (g, ell), c in sorted(self.components.items())
            ],
            "distortion": [list(t) for t in self.distortion],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "CellMetrics":
        values = dict(data)
        values["estimator"] = EstimatorKind.parse(values["estimator"])
        values["cell"] = tuple(float(x) for x in values["cell"])
        values["rejpre"] = {float(a): float(r) for a, r in values["rejpre"].items()}
        values["components"] = {
            (int(g), int(ell)): ComponentMetrics(b, r, c) for g, ell, b, r, c in values["components"]
        }
        values["distortion"] = tuple(tuple(t) for t in values["distortion"])
        return cls(**values)


def _interval_stats(estimates, ses, truth: float, bound: float):
    """Coverage, length and upper-tail excess of theta_hat -/+ (z se + bound)."""
    ses = np.asarray(ses, dtype=float)
    finite = np.isfinite(ses)
    if not finite.any():
        return math.nan, math.nan, math.nan
    intervals = np.array(
        [robust_interval(e, s, bound) for e, s in zip(np.asarray(estimates)[finite], ses[finite])]
    )
    lower, upper = intervals[:, 0], intervals[:, 1]
    coverage = float(np.mean((lower <= truth) & (truth <= upper)))
    length = float(np.mean(upper - lower))
    utex = float(np.mean(upper - truth) - np.mean(truth - lower))
    return coverage, length, utex


def summarise(
    kind: EstimatorKind,
    spec: DgpSpec,
    records: Sequence[ReplicationRecord],
    targets: TrueTargets,
) -> CellMetrics:
    """Reduce replication records of one estimator in replication order."""
    draws = [r.draws.get(kind) for r in records]
    ok = [d for d in draws if d is not None]
    placebos = [r.placebo for r in records if r.placebo is not None]
    rejpre = placebo_rates(placebos)
    truth = targets.theta_observable
    bound = bias_bound(spec.B, spec.Gamma, spec.DeltaR, spec.t0)

    if not ok:
        nan = math.nan
        return CellMetrics(
            kind, spec.cell, len(records), len(records), truth, nan, nan, nan, nan, nan, nan,
            nan, nan, rejpre, len(records) - len(placebos),
        )

    estimates = np.array([d.estimate for d in ok])
    ses = np.array([d.se for d in ok])
    errors = estimates - truth
    bias = float(np.mean(errors))
    coverage, length, utex = _interval_stats(estimates, ses, truth, bound)
    coverage_wald = _interval_stats(estimates, ses, truth, 0.0)[0]

    components = {}
    for cell, value in sorted(targets.cells.items()):
        pairs = [d.components[cell] for d in ok if cell in d.components]
        if not pairs:
            continue
        est = np.array([p[0] for p in pairs])
        err = est - value
        cov = _interval_stats(est, [p[1] for p in pairs], value, bound)[0]
        components[cell] = ComponentMetrics(
            float(np.mean(err)), float(np.sqrt(np.mean(err ** 2))), cov
        )

    return CellMetrics(
        estimator=kind,
        cell=spec.cell,
        replications=len(records),
        failures=len(records) - len(ok),
        theta_true=truth,
        bias=bias,
        variance=float(np.var(errors)),
        rmse=float(np.sqrt(np.mean(errors ** 2))),
        medae=float(np.median(np.abs(errors))),
        coverage=coverage,
        coverage_wald=coverage_wald,
        length=length,
        utex=utex,
        rejpre=rejpre,
        placebo_failures=len(records) - len(placebos),
        components=components,
        distortion=tuple(d.distortion for d in ok if d.distortion is not None),
    )


# ====== CELLS AND GRIDS ======

def run_cell(
    spec: DgpSpec,
    estimators: Optional[Iterable] = None,
    R: int = 100,
    base_seed: int = 0,
    threads: Optional[int] = None,
    dist_horizon: int = 0,
) -> Dict[EstimatorKind, CellMetrics]:
    """
    Run R replications of one cell and summarise every estimator.

    Estimator failures are counted per replication and never abort the cell.
    """
    if int(R) < 1:
        raise ValidationError(f"R must be >= 1, got {R}")
    estimators = [
        EstimatorKind.parse(e) for e in (estimators or EstimatorKind.get_cell_estimators())
    ]
    targets = benchmark_targets(spec)

    def run(index):
        return replicate(spec, estimators, base_seed, index, dist_horizon)

    records = parallel_map(run, range(int(R)), threads)
    metrics = {kind: summarise(kind, spec, records, targets) for kind in estimators}
    logger.info(
        f"Cell {spec.design.value} (DeltaR={spec.DeltaR:g}, B={spec.B:g}, Gamma={spec.Gamma:g}): "
        f"{R} replications, "
        + ", ".join(f"{k.value} bias={m.bias:.4g}" for k, m in metrics.items())
    )
    return metrics


@dataclass(frozen=True, eq=False)
class GridResult:
    """Metrics of every cell of a violation grid."""

    design: Design
    cells: Dict[Tuple[float, float, float], Dict[EstimatorKind, CellMetrics]]

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"design": self.design.value, **m.to_row()}
            for _, metrics in sorted(self.cells.items())
            for _, m in sorted(metrics.items(), key=lambda item: item[0].value)
        ]
        return pd.DataFrame(rows)

    def placebo_rates(self, alpha: float = 0.05) -> Dict[Tuple[float, float, float], float]:
        rates = {}
        for cell, metrics in self.cells.items():
            first = next(iter(metrics.values()))
            rates[cell] = first.rejpre.get(alpha, math.nan)
        return rates


def grid_cells(
    deltas: Sequence[float], bs: Sequence[float], gammas: Sequence[float]
) -> List[Tuple[float, float, float]]:
    return [(float(d), float(b), float(g)) for d in deltas for b in bs for g in gammas]


def fill_admissibility(cells):
    """
    Cov >= COVERAGE_FLOOR and Len <= LENGTH_CAP * Len0, with Len0 the length
    at the (0, 0, 0) cell. Without that cell admissibility stays unset.
    """
    baseline = cells.get((0.0, 0.0, 0.0))
    if baseline is None:
        return cells
    filled = {}
    for cell, metrics in cells.items():
        filled[cell] = {}
        for kind, m in metrics.items():
            len0 = baseline[kind].length
            if math.isnan(m.coverage) or math.isnan(len0):
                filled[cell][kind] = m
                continue
            admissible = (
                m.coverage >= app_settings.COVERAGE_FLOOR
                and m.length <= app_settings.LENGTH_CAP * len0
            )
            filled[cell][kind] = m.with_admissible(bool(admissible))
    return filled


def run_grid(
    spec: DgpSpec,
    cells: Iterable[Tuple[float, float, float]],
    estimators: Optional[Iterable] = None,
    R: int = 100,
    base_seed: int = 0,
    threads: Optional[int] = None,
    use_async: Optional[bool] = None,
) -> GridResult:
    """
    Run every violation cell through the task executor.

    Cells run as ``run_cell_task`` (asynchronously when Celery is enabled);
    async results are resolved in cell order. A cell that yields no metrics
    raises CellFailed rather than leaving a hole in the grid.
    """
    from ..services import TaskExecutor
    from ..tasks import run_cell_task

    estimators = [
        EstimatorKind.parse(e).value for e in (estimators or EstimatorKind.get_cell_estimators())
    ]
    cells = list(cells)
    pending = [
        TaskExecutor.execute(
            run_cell_task,
            spec.at_cell(*cell).to_dict(),
            estimators,
            int(R),
            int(base_seed),
            threads,
            use_async=use_async,
        )
        for cell in cells
    ]
    results = {}
    for cell, outcome in zip(cells, pending):
        if outcome is not None and not isinstance(outcome, Mapping):
            try:
                outcome = outcome.get()
            except StaggerLabError:
                raise
            except Exception as exc:
                raise CellFailed(
                    f"cell {cell} failed on its worker: {exc}",
                    details={"cell": list(cell), "design": spec.design.value},
                ) from exc
        if outcome is None:
            raise CellFailed(
                f"cell {cell} produced no result",
                details={"cell": list(cell), "design": spec.design.value},
            )
        results[cell] = {
            EstimatorKind.parse(kind): CellMetrics.from_dict(data) for kind, data in outcome.items()
        }
    logger.info(f"Completed {len(results)} of {len(cells)} cells for {spec.design.value}")
    return GridResult(spec.design, fill_admissibility(results))


# ====== FRONTIER AND PLACEBO TABLES ======

def placebo_table(grid: GridResult, B: float = 0.0, alpha: float = 0.05) -> pd.DataFrame:
    """Placebo rejection rates at one B: rows DeltaR, columns Gamma."""
    rates = {
        (delta, gamma): rate
        for (delta, b, gamma), rate in grid.placebo_rates(alpha).items()
        if b == B
    }
    rows = [
        {"DeltaR": delta, **{f"Gamma={gamma:g}": rate for gamma, rate in sorted(row.items())}}
        for delta, row in placebo_grid(rates).items()
    ]
    return pd.DataFrame(rows)


def placebo_frontier(
    grid: GridResult,
    threshold: Optional[float] = None,
    alpha: float = 0.05,
) -> List[FrontierPoint]:
    """
    Gamma* at which the placebo rejection rate reaches ``threshold``, per
    (B, DeltaR), interpolated over the simulated Gamma grid.
    """
    rates = grid.placebo_rates(alpha)
    pairs = sorted({(b, delta) for (delta, b, _) in rates})
    points = []
    for b, delta in pairs:
        gammas = sorted(gamma for (d, bb, gamma) in rates if d == delta and bb == b)

        def monitor(B, Gamma, DeltaR):
            return rates[(DeltaR, B, Gamma)]

        points.append(breakdown_frontier(None, b, delta, gammas, monitor, threshold))
    return points
