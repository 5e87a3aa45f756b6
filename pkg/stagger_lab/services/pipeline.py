# stagger_lab/services/pipeline.py

"""
Command pipeline behind the CLI.

A run is described by one JSON document (``RunConfig``). Each command writes
its CSV/JSON artifacts into the output directory and finishes with
``manifest.json``, which lists every artifact with its sha256 checksum.
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd

from ..conf import override_settings
from ..constants import (
    AggregationKind,
    Command,
    ControlKind,
    Design,
    EstimatorKind,
    RestrictionKind,
)
from ..diagnostics import diagnostics_report, distortion_association
from ..exceptions import (
    ConfigInvalid,
    DegenerateVariance,
    InputNotFound,
    NoCohortsAtHorizon,
    Unbounded,
    ValidationError,
)
from ..group_time import (
    aggregate_event_study,
    aggregate_frame,
    aggregation_scheme,
    cohort_propensities,
    estimate_gatt_table,
    imputation_event_study,
)
from ..models import EventWindow, Panel, read_panel_csv
from ..montecarlo import (
    DgpSpec,
    Preset,
    get_grid,
    get_preset,
    grid_cells,
    placebo_frontier,
    placebo_table,
    run_grid,
    simulate,
)
from ..orthogonal import crossfit_table
from ..sensitivity import (
    DeviationMap,
    RestrictionClass,
    breakdown_frontier,
    calibrate,
    critical_value,
    dimensionless_breakdown,
    empirical_grid,
    frontier_frame,
    identified_set,
    region_frame,
    sensitivity_region,
)
from ..twfe import coefficient_weights, twfe_event_coeffs, twfe_projection, weights_frame
from ..utils import file_checksum, plot_fragment, write_frame

logger = logging.getLogger("stagger_lab")

MANIFEST_NAME = "manifest.json"


# ====== CONFIGURATION ======

@dataclass(frozen=True)
class RunConfig:
    """
    One pipeline run.

    Exactly one of ``panel`` (a CSV path) and ``design`` (a preset key or a
    DGP mapping) is set. Grids are (DeltaR, B, Gamma) value lists or a named
    grid.
    """

    command: Command
    panel: Optional[str] = None
    design: Optional[Union[str, Dict[str, Any]]] = None
    window: Optional[Tuple[int, int, int]] = None
    horizons: Optional[Tuple[int, ...]] = None
    horizon: int = 0
    estimators: Tuple[EstimatorKind, ...] = (EstimatorKind.TWFE, EstimatorKind.GROUP_TIME)
    aggregation: AggregationKind = AggregationKind.SAMPLE_SHARE
    control: ControlKind = ControlKind.NEVER_TREATED
    propensity: bool = False
    restriction: RestrictionKind = RestrictionKind.CURVATURE_BOUNDED
    t0: int = 2
    grid: Optional[Any] = None
    replications: Optional[int] = None
    scale: Optional[str] = None
    out: str = "out"
    seed: int = 0
    threads: Optional[int] = None
    settings: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if (self.panel is None) == (self.design is None):
            raise ConfigInvalid(
                "exactly one of 'panel' and 'design' must be given",
                details={"panel": self.panel, "design": self.design},
            )
        if self.command in (Command.SIMULATE, Command.FRONTIER) and self.design is None:
            raise ConfigInvalid(f"command {self.command.value} needs a design")
        if self.threads is not None and int(self.threads) < 1:
            raise ConfigInvalid(f"threads must be >= 1, got {self.threads}")
        if self.replications is not None and int(self.replications) < 1:
            raise ConfigInvalid(f"replications must be >= 1, got {self.replications}")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], **overrides) -> "RunConfig":
        """Parse a config document; non-None ``overrides`` win over its keys."""
        values = dict(data)
        values.update({k: v for k, v in overrides.items() if v is not None})
        known = set(cls.__dataclass_fields__)
        unknown = set(values) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        if "command" not in values:
            raise ConfigInvalid("config needs a 'command'")
        try:
            values["command"] = Command.parse(values["command"])
            if "estimators" in values:
                values["estimators"] = tuple(EstimatorKind.parse(e) for e in values["estimators"])
            for key, enum in (
                ("aggregation", AggregationKind),
                ("control", ControlKind),
                ("restriction", RestrictionKind),
            ):
                if key in values:
                    values[key] = enum.parse(values[key])
            if values.get("window") is not None:
                values["window"] = _parse_window(values["window"])
            if values.get("horizons") is not None:
                values["horizons"] = tuple(int(k) for k in values["horizons"])
        except ValueError as exc:
            raise ConfigInvalid(str(exc)) from exc
        return cls(**values)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)


def _parse_window(value) -> Optional[Tuple[int, int, int]]:
    if value == "full":
        return None
    if isinstance(value, Mapping):
        return (int(value["lower"]), int(value["upper"]), int(value.get("baseline", -1)))
    lower, upper, *rest = value
    return (int(lower), int(upper), int(rest[0]) if rest else -1)


def load_config(path: Union[str, Path], **overrides) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise InputNotFound(f"config file not found: {path}", details={"path": str(path)})
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config is not valid JSON: {exc}", details={"path": str(path)}) from exc
    if not isinstance(data, Mapping):
        raise ConfigInvalid("config document must be a JSON object")
    return RunConfig.from_mapping(data, **overrides)


# ====== INPUTS ======

def resolve_preset(config: RunConfig) -> Preset:
    """Preset named by the config, or a custom preset around a DGP mapping."""
    if isinstance(config.design, str):
        preset = get_preset(config.design, config.scale)
    else:
        try:
            spec = DgpSpec.from_dict(config.design)
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"invalid design: {exc}") from exc
        base = get_preset(spec.design.value if not spec.is_mc81 else "mc81")
        preset = replace(base, name="custom", spec=spec)
    if config.replications is not None:
        preset = replace(preset, R=int(config.replications))
    return replace(preset, spec=replace(preset.spec, seed=int(config.seed)))


def load_panel(config: RunConfig) -> Panel:
    if config.panel is not None:
        return read_panel_csv(config.panel)
    return simulate(resolve_preset(config).spec)


def resolve_window(config: RunConfig, panel: Panel) -> EventWindow:
    if config.window is None:
        return EventWindow.full(panel)
    lower, upper, baseline = config.window
    return EventWindow.between(lower, upper, baseline)


# ====== ARTIFACTS ======

class ArtifactWriter:
    """Writes run artifacts and records them for the manifest."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files: List[Path] = []

    def frame(self, name: str, frame: pd.DataFrame) -> Path:
        path = write_frame(frame, self.out_dir / name)
        self.files.append(path)
        return path

    def json(self, name: str, payload: Mapping[str, Any]) -> Path:
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
        self.files.append(path)
        return path

    def manifest(self, config: RunConfig) -> Dict[str, Any]:
        entries = [
            {
                "path": path.relative_to(self.out_dir).as_posix(),
                "sha256": file_checksum(path),
                "bytes": path.stat().st_size,
            }
            for path in sorted(self.files)
        ]
        manifest = {"command": config.command.value, "seed": config.seed, "files": entries}
        path = self.out_dir / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return manifest


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"not JSON serialisable: {type(value).__name__}")


def verify_manifest(out_dir: Union[str, Path]) -> bool:
    """Whether every listed artifact exists with its recorded checksum."""
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / MANIFEST_NAME).read_text())
    for entry in manifest["files"]:
        path = out_dir / entry["path"]
        if not path.exists() or file_checksum(path) != entry["sha256"]:
            return False
    return True


# ====== COMMANDS ======

def _post_horizons(config: RunConfig, window: EventWindow) -> List[int]:
    horizons = config.horizons if config.horizons is not None else window.estimated
    return [k for k in horizons if k >= 0]


def run_diagnose(config: RunConfig, writer: ArtifactWriter) -> None:
    panel = load_panel(config)
    window = resolve_window(config, panel)
    projection = twfe_projection(panel, window)
    result = twfe_event_coeffs(panel, window, projection)
    horizons = [k for k in _post_horizons(config, window) if k in projection.retained]
    decompositions = [coefficient_weights(panel, window, k, projection) for k in horizons]
    report = diagnostics_report(panel, window, _post_horizons(config, window))

    writer.frame("twfe_coefficients.csv", result.to_frame())
    writer.frame("weights.csv", weights_frame(panel, decompositions))
    writer.frame("diagnostics.csv", report.to_frame())
    coefficients = sorted(result.coefficients.items())
    writer.frame(
        "event_study_fragment.csv",
        plot_fragment([k for k, _ in coefficients], [b for _, b in coefficients], "twfe"),
    )


def _aggregate(table, panel: Panel, config: RunConfig, window: EventWindow):
    horizons = _post_horizons(config, window)
    scheme = aggregation_scheme(panel, config.aggregation, horizons)
    estimates = aggregate_event_study(table, scheme, horizons)
    if not estimates:
        raise NoCohortsAtHorizon(
            "no cohort is treated at any requested horizon",
            details={"horizons": horizons},
        )
    return scheme, estimates


def run_estimate(config: RunConfig, writer: ArtifactWriter) -> None:
    panel = load_panel(config)
    window = resolve_window(config, panel)
    threads = config.threads

    table = estimate_gatt_table(panel, config.control, config.propensity, threads=threads)
    scheme, estimates = _aggregate(table, panel, config, window)
    writer.frame("gatt.csv", table.to_frame())
    writer.frame("event_study.csv", aggregate_frame(estimates, scheme))
    fragments = [
        plot_fragment(list(estimates), [e.estimate for e in estimates.values()], "group-time")
    ]

    if EstimatorKind.TWFE in config.estimators:
        result = twfe_event_coeffs(panel, window)
        writer.frame("twfe_coefficients.csv", result.to_frame())
        post = sorted((k, b) for k, b in result.coefficients.items() if k >= 0)
        fragments.append(plot_fragment([k for k, _ in post], [b for _, b in post], "twfe"))
    if EstimatorKind.DR_CROSSFIT in config.estimators:
        dr_table = crossfit_table(panel, seed=config.seed, threads=threads)
        _, dr_estimates = _aggregate(dr_table, panel, config, window)
        writer.frame("dr_gatt.csv", dr_table.to_frame())
        writer.frame("dr_event_study.csv", aggregate_frame(dr_estimates, scheme))
        fragments.append(
            plot_fragment(list(dr_estimates), [e.estimate for e in dr_estimates.values()], "dr-crossfit")
        )
    if EstimatorKind.IMPUTATION in config.estimators:
        imputed = imputation_event_study(panel, window)
        writer.frame(
            "imputation.csv",
            pd.DataFrame(
                [{"k": k, "estimate": v, "n_cells": imputed.counts[k]} for k, v in sorted(imputed.effects.items())],
                columns=["k", "estimate", "n_cells"],
            ),
        )
        fragments.append(
            plot_fragment(sorted(imputed.effects), [imputed.effects[k] for k in sorted(imputed.effects)], "imputation")
        )
    if panel.n_covariates:
        writer.frame("propensity.csv", cohort_propensities(panel).to_frame())
    writer.frame("event_study_fragment.csv", pd.concat(fragments, ignore_index=True))


def _pre_coefficients(panel: Panel, window: EventWindow) -> Dict[int, Tuple[float, float]]:
    result = twfe_event_coeffs(panel, window)
    return {
        k: (result.coefficients[k], result.standard_errors[k])
        for k in sorted(result.pre_coefficients())
    }


def _target(panel: Panel, config: RunConfig, window: EventWindow):
    """Group-time aggregate at ``config.horizon`` and its deviation map."""
    table = estimate_gatt_table(panel, config.control, config.propensity, threads=config.threads)
    scheme = aggregation_scheme(panel, config.aggregation, [config.horizon])
    estimates = aggregate_event_study(table, scheme, [config.horizon])
    if config.horizon not in estimates:
        raise NoCohortsAtHorizon(
            f"no cohort is treated at horizon {config.horizon}",
            details={"horizons": [config.horizon]},
        )
    estimate = estimates[config.horizon]
    return estimate, DeviationMap.from_weights(estimate.weights, config.horizon)


def run_calibrate(config: RunConfig, writer: ArtifactWriter) -> None:
    panel = load_panel(config)
    window = resolve_window(config, panel)
    estimate, _ = _target(panel, config, window)
    output = calibrate(_pre_coefficients(panel, window), estimate.estimate)
    writer.json(
        "calibration.json",
        {
            "horizon": config.horizon,
            "tau_hat": estimate.estimate,
            "A_pre": output.A_pre,
            "M_pre": output.M_pre,
            "drift": output.drift,
            "B_hat": output.B_hat,
            "Gamma_hat": output.Gamma_hat,
            "DeltaR_hat": output.DeltaR_hat,
            "kappa_B": output.kappa_B,
            "c_R": output.c_R,
            "grids": {k: list(v) for k, v in output.grids.items()},
            "trace": list(output.trace),
        },
    )


def _sensitivity_cells(config: RunConfig, panel: Panel, window: EventWindow, tau_hat: float):
    """(DeltaR, B, Gamma) cells: the configured grid or the empirical one."""
    if config.grid is not None and config.grid != "empirical":
        deltas, bs, gammas = get_grid(config.grid)
        return grid_cells(deltas, bs, gammas)
    output = calibrate(_pre_coefficients(panel, window), tau_hat)
    changes = np.diff(panel.outcomes, axis=1)
    sigma_dy = float(np.nanstd(changes))
    grid = empirical_grid(output.M_pre, sigma_dy, output.DeltaR_hat)
    return [(d, b, g) for (b, g, d) in grid.cells()]


def run_sensitivity(config: RunConfig, writer: ArtifactWriter) -> None:
    panel = load_panel(config)
    window = resolve_window(config, panel)
    estimate, deviation_map = _target(panel, config, window)
    cells = _sensitivity_cells(config, panel, window, estimate.estimate)
    z = critical_value()

    rows, region_inputs, intervals = [], {}, {}
    for delta, b, gamma in cells:
        rc = RestrictionClass(config.restriction, B=b, Gamma=gamma, DeltaR=delta, t0=config.t0)
        try:
            bounds = identified_set(estimate.estimate, deviation_map, rc)
            lower, upper = bounds.lower, bounds.upper
        except Unbounded:
            logger.warning(f"Identified set is unbounded at (DeltaR={delta}, B={b}, Gamma={gamma})")
            lower, upper = -math.inf, math.inf
        ci = (lower - z * estimate.se, upper + z * estimate.se)
        intervals[(delta, b, gamma)] = ci
        region_inputs[(b, gamma, delta)] = (None, ci[1] - ci[0], ci)
        rows.append(
            {"DeltaR": delta, "B": b, "Gamma": gamma, "set_lower": lower, "set_upper": upper,
             "ci_lower": ci[0], "ci_upper": ci[1]}
        )
    writer.frame("sensitivity.csv", pd.DataFrame(rows))
    if (0.0, 0.0, 0.0) in region_inputs:
        writer.frame("region.csv", region_frame(sensitivity_region(region_inputs)))

    sigma_dy = float(np.nanstd(np.diff(panel.outcomes, axis=1)))
    points = []
    for delta, b in sorted({(d, bb) for d, bb, _ in cells}):
        gammas = sorted({g for d, bb, g in cells if d == delta and bb == b})
        points.append(
            breakdown_frontier(lambda B, G, D: intervals[(D, B, G)], b, delta, gammas)
        )
    frame = frontier_frame(points)
    frame["gamma_star"] = [dimensionless_breakdown(p.Gamma_star, sigma_dy) for p in points]
    writer.frame("frontier.csv", frame)


def _grid_for(config: RunConfig, preset: Preset):
    deltas, bs, gammas = get_grid(config.grid, default=preset.grid)
    return grid_cells(deltas, bs, gammas)


def run_simulate(config: RunConfig, writer: ArtifactWriter) -> None:
    preset = resolve_preset(config)
    cells = _grid_for(config, preset)
    grid = run_grid(preset.spec, cells, preset.estimators, preset.R, config.seed, config.threads)
    writer.frame("cells.csv", grid.to_frame())
    bs = sorted({b for _, b, _ in cells})
    writer.frame("placebo.csv", placebo_table(grid, B=bs[0]))

    if preset.spec.design == Design.MC84_SMALL:
        writer.frame("frontier.csv", frontier_frame(placebo_frontier(grid)))

    rows = []
    for cell, metrics in sorted(grid.cells.items()):
        twfe = metrics.get(EstimatorKind.TWFE)
        if twfe is None or len(twfe.distortion) < 3:
            continue
        try:
            association = distortion_association(twfe.distortion)
        except (DegenerateVariance, ValidationError) as exc:
            logger.warning(f"Cell {cell}: no distortion association ({exc.message})")
            continue
        rows.append(
            {"DeltaR": cell[0], "B": cell[1], "Gamma": cell[2],
             "corr_N": association.corr_negative, "corr_C": association.corr_cross,
             "slope_N": association.slope_negative, "slope_C": association.slope_cross,
             "degenerate": int(association.degenerate)}
        )
    if rows:
        writer.frame("distortion.csv", pd.DataFrame(rows))


def run_frontier(config: RunConfig, writer: ArtifactWriter) -> None:
    preset = resolve_preset(config)
    cells = _grid_for(config, preset)
    grid = run_grid(preset.spec, cells, preset.estimators, preset.R, config.seed, config.threads)
    points = placebo_frontier(grid)
    writer.frame("frontier.csv", frontier_frame(points))
    bs = sorted({b for _, b, _ in cells})
    writer.frame("placebo.csv", placebo_table(grid, B=bs[0]))
    fragments = [
        plot_fragment(
            [p.B for p in points if p.DeltaR == delta],
            [p.Gamma_star for p in points if p.DeltaR == delta],
            f"DeltaR={delta:g}",
        )
        for delta in sorted({p.DeltaR for p in points})
    ]
    writer.frame("frontier_fragment.csv", pd.concat(fragments, ignore_index=True))


COMMANDS = {
    Command.DIAGNOSE: run_diagnose,
    Command.ESTIMATE: run_estimate,
    Command.SENSITIVITY: run_sensitivity,
    Command.CALIBRATE: run_calibrate,
    Command.SIMULATE: run_simulate,
    Command.FRONTIER: run_frontier,
}


def run_pipeline(config: RunConfig) -> Dict[str, Any]:
    """
    Execute ``config.command`` and return the artifact manifest.

    Errors propagate as StaggerLabError subclasses carrying their module.
    ``config.settings`` and ``config.threads`` apply for this run only.
    """
    run_settings = dict(config.settings)
    if config.threads is not None:
        run_settings["THREADS"] = int(config.threads)
    writer = ArtifactWriter(config.out_dir)
    logger.info(f"Running {config.command.value} into {config.out_dir}")
    with override_settings(**run_settings):
        COMMANDS[config.command](config, writer)
    manifest = writer.manifest(config)
    logger.info(f"{config.command.value} wrote {len(manifest['files'])} artifacts")
    return manifest
