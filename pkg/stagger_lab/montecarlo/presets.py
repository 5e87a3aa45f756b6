# stagger_lab/montecarlo/presets.py

"""
Named simulation profiles selectable by string key.
"""

from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence, Tuple

from ..constants import NEVER, Design, EstimatorKind
from ..exceptions import ConfigInvalid
from .dgp import ConfoundedProfile, DgpSpec

Grid = Tuple[Tuple[float, ...], Tuple[float, ...], Tuple[float, ...]]

MC81_GRID: Grid = (
    (0.0, 0.25, 0.50, 1.00),
    (0.0, 0.05, 0.10, 0.20),
    (0.0, 0.005, 0.010, 0.020),
)
MC84_GRID: Grid = (
    (0.0, 0.25, 0.50),
    (0.0, 0.50, 1.00, 1.50),
    (0.0, 0.05, 0.10, 0.15),
)
NULL_GRID: Grid = ((0.0,), (0.0,), (0.0,))

DESK_SCALE = {"n": 2000, "R": 500}
FULL_SCALE = {"n": 5000, "R": 2000}


@dataclass(frozen=True)
class Preset:
    name: str
    spec: DgpSpec
    R: int
    grid: Grid
    estimators: Tuple[EstimatorKind, ...] = tuple(EstimatorKind.get_cell_estimators())

    def scaled(self, n: int, R: int) -> "Preset":
        return replace(self, spec=replace(self.spec, n=int(n)), R=int(R))


def _mc81(design: Design) -> DgpSpec:
    return DgpSpec(design=design)


MC84_SPEC = DgpSpec(
    design=Design.MC84_SMALL,
    n=2000,
    T=8,
    adoption_times=(5, NEVER),
    shares=(0.5, 0.5),
    t0=5,
    tau=1.0,
)

# Shares are placeholders; cohorts are drawn from the profile's logit.
MC85_SPEC = DgpSpec(
    design=Design.MC85_CONFOUNDED,
    n=2000,
    T=6,
    adoption_times=(3, 4, 5, NEVER),
    shares=(0.25, 0.25, 0.25, 0.25),
    t0=2,
    profile=ConfoundedProfile(),
)

PRESETS: Dict[str, Preset] = {
    "mc81-dgp1": Preset("mc81-dgp1", _mc81(Design.MC81_DGP1), FULL_SCALE["R"], MC81_GRID,
                        (EstimatorKind.TWFE, EstimatorKind.GROUP_TIME, EstimatorKind.DR_CROSSFIT)),
    "mc81-dgp2": Preset("mc81-dgp2", _mc81(Design.MC81_DGP2), FULL_SCALE["R"], MC81_GRID,
                        (EstimatorKind.TWFE, EstimatorKind.GROUP_TIME, EstimatorKind.IMPUTATION)),
    "mc81-dgp3": Preset("mc81-dgp3", _mc81(Design.MC81_DGP3), FULL_SCALE["R"], MC81_GRID,
                        (EstimatorKind.TWFE, EstimatorKind.GROUP_TIME, EstimatorKind.DR_CROSSFIT)),
    "mc84": Preset("mc84", MC84_SPEC, 500, MC84_GRID, (EstimatorKind.GROUP_TIME,)),
    "mc85": Preset("mc85", MC85_SPEC, 500, NULL_GRID,
                   (EstimatorKind.TWFE, EstimatorKind.GROUP_TIME, EstimatorKind.DR_CROSSFIT)),
}
ALIASES = {"mc81": "mc81-dgp1", "mc84-small": "mc84", "mc85-confounded": "mc85"}
GRIDS: Dict[str, Grid] = {"mc81": MC81_GRID, "mc84": MC84_GRID, "null": NULL_GRID}
PRESET_GRID_NAMES = ("paper", "preset")


def get_preset(name: str, scale: Optional[str] = None) -> Preset:
    """
    Look up a preset by key. ``scale`` is "desk" (n=2000, R=500) or
    "full" (n=5000, R=2000); MC84 keeps its n at either scale.
    """
    key = ALIASES.get(str(name).lower(), str(name).lower())
    if key not in PRESETS:
        raise ConfigInvalid(
            f"unknown preset {name!r}",
            details={"choices": sorted(PRESETS) + sorted(ALIASES)},
        )
    preset = PRESETS[key]
    if scale is None:
        return preset
    sizes = {"desk": DESK_SCALE, "full": FULL_SCALE}.get(scale)
    if sizes is None:
        raise ConfigInvalid(f"unknown scale {scale!r}", details={"choices": ["desk", "full"]})
    n = preset.spec.n if preset.spec.design == Design.MC84_SMALL else sizes["n"]
    return preset.scaled(n, sizes["R"])


def get_grid(name, default: Optional[Grid] = None) -> Grid:
    """
    A named grid, or an explicit (deltas, bs, gammas) triple of lists.

    The names in ``PRESET_GRID_NAMES`` stand for the grid shipped with the
    selected preset and resolve to ``default``.
    """
    if name is None:
        if default is None:
            raise ConfigInvalid("no grid given")
        return default
    if isinstance(name, str):
        key = name.lower()
        if key in PRESET_GRID_NAMES:
            if default is None:
                raise ConfigInvalid(f"grid {name!r} needs a simulation design")
            return default
        if key not in GRIDS:
            raise ConfigInvalid(
                f"unknown grid {name!r}", details={"choices": sorted(GRIDS) + list(PRESET_GRID_NAMES)}
            )
        return GRIDS[key]
    parts: Sequence = list(name)
    if len(parts) != 3 or any(len(p) == 0 for p in parts):
        raise ConfigInvalid("a grid is three nonempty lists (DeltaR, B, Gamma)")
    return tuple(tuple(float(v) for v in p) for p in parts)
