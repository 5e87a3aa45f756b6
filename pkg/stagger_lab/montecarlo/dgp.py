# stagger_lab/montecarlo/dgp.py

"""
Seeded data-generating processes for the simulation designs.

MC81 designs share an additive envelope with cohort-scaled dynamic effects
and a signed violation term; they differ in the shock law and in
outcome-driven attrition. MC84 is a two-arm panel with a linear drift on the
treated arm. MC85 draws cohorts from a covariate-dependent multinomial logit
with conditional parallel trends.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import expit, softmax

from ..constants import NEVER, Design
from ..exceptions import UnsupportedSpec, ValidationError
from ..models import Panel
from ..utils import derive_seed
from ..validators import validate_nonnegative

logger = logging.getLogger("stagger_lab")

Cell = Tuple[int, int]


# ====== SPECIFICATION ======

@dataclass(frozen=True)
class ConfoundedProfile:
    """
    Free constants of the confounded-adoption design.

    ``cohort_coefficients`` holds one (intercept, x_1, ..., x_d) row per entry
    of the adoption support, never-treated last.
    """

    covariance: Tuple[Tuple[float, ...], ...] = ((1.0, 0.3), (0.3, 1.0))
    cohort_coefficients: Tuple[Tuple[float, ...], ...] = (
        (0.0, 0.8, -0.4),
        (0.0, 0.3, 0.3),
        (0.0, -0.4, 0.6),
        (0.3, 0.0, 0.0),
    )
    beta: Tuple[float, ...] = (1.0, 0.5)
    kappa: Tuple[float, ...] = (0.3, -0.2)
    rho: float = 0.1
    sigma_mu: float = 1.0
    sigma_lambda: float = 0.5
    sigma_eta: float = 1.0
    a: Tuple[float, float, float, float] = (0.5, 0.5, 1.0, 0.2)
    ell: float = 2.0
    K: float = 4.0

    @property
    def dimension(self) -> int:
        return len(self.beta)

    def effect(self, g: int, k: int, T: int) -> float:
        """tau_g(k) = a0 + a1 g/T + a2 (1 - exp(-k/ell)) + a3 sin(2 pi k / K)."""
        a0, a1, a2, a3 = self.a
        return (
            a0
            + a1 * g / T
            + a2 * (1.0 - math.exp(-k / self.ell))
            + a3 * math.sin(2.0 * math.pi * k / self.K)
        )


@dataclass(frozen=True)
class DgpSpec:
    """
    One simulation design at one violation cell.

    Defaults are the MC81 values: 5000 units over 12 periods, adoption at
    4, 6, 8, 10 or never with equal shares, h = (0.8, 1.0, 1.2, 1.4) and the
    event-time profile m = (0.5, 0.75, 1.0) held at its last value.

    ``noise_scale`` multiplies every outcome shock; adoption and attrition
    draws are unaffected, so 0 gives deterministic outcomes.
    """

    design: Design = Design.MC81_DGP1
    n: int = 5000
    T: int = 12
    adoption_times: Tuple[float, ...] = (4, 6, 8, 10, NEVER)
    shares: Tuple[float, ...] = (0.2, 0.2, 0.2, 0.2, 0.2)
    h: Tuple[float, ...] = (0.8, 1.0, 1.2, 1.4)
    m: Tuple[float, ...] = (0.5, 0.75, 1.0)
    signs: Tuple[int, ...] = (1, -1, 1, -1)
    DeltaR: float = 0.0
    B: float = 0.0
    Gamma: float = 0.0
    rho_x: float = 0.5
    beta: float = 1.0
    sigma_alpha: float = 1.0
    sigma_lambda: float = 0.5
    phi: float = 0.5
    nu: float = 5.0
    selection: Tuple[float, float, float] = (1.25, -0.35, -0.10)
    cohort_trends: Tuple[float, ...] = ()
    tau: float = 1.0
    t0: int = 6
    pooled_horizons: Tuple[int, ...] = (0, 1, 2, 3)
    noise_scale: float = 1.0
    profile: ConfoundedProfile = field(default_factory=ConfoundedProfile)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "design", Design.parse(self.design))
        if int(self.n) < 2 or int(self.T) < 2:
            raise ValidationError(f"need n >= 2 and T >= 2, got n={self.n}, T={self.T}")
        adoption = tuple(float(a) for a in self.adoption_times)
        shares = tuple(float(s) for s in self.shares)
        if len(adoption) != len(shares):
            raise ValidationError("adoption_times and shares must have the same length")
        if any(s < 0 for s in shares) or abs(sum(shares) - 1.0) > 1e-9:
            raise ValidationError(f"shares must be nonnegative and sum to 1, got {shares}")
        for a in adoption:
            if a != NEVER and not (a == int(a) and 1 <= a <= self.T):
                raise ValidationError(f"adoption time {a} is outside 1..{self.T}")
        object.__setattr__(self, "adoption_times", adoption)
        object.__setattr__(self, "shares", shares)
        for name in ("DeltaR", "B", "Gamma", "noise_scale"):
            validate_nonnegative(getattr(self, name), name)

        treated = [a for a in adoption if a != NEVER]
        if self.is_mc81:
            for name in ("h", "signs"):
                if len(getattr(self, name)) != len(treated):
                    raise ValidationError(f"{name} needs one entry per adoption cohort")
            if self.cohort_trends and len(self.cohort_trends) != len(treated):
                raise ValidationError("cohort_trends needs one entry per adoption cohort")
        if self.design == Design.MC85_CONFOUNDED:
            rows = self.profile.cohort_coefficients
            if len(rows) != len(adoption):
                raise ValidationError("cohort_coefficients needs one row per adoption time")
            if any(len(row) != self.profile.dimension + 1 for row in rows):
                raise ValidationError("cohort coefficient rows are (intercept, x_1..x_d)")

    # ====== DERIVED ======

    @property
    def is_mc81(self) -> bool:
        return self.design in Design.get_mc81_designs()

    @property
    def cohorts(self) -> Tuple[int, ...]:
        """Adoption periods of the treated cohorts, in declared order."""
        return tuple(int(a) for a in self.adoption_times if a != NEVER)

    @property
    def cell(self) -> Tuple[float, float, float]:
        return (self.DeltaR, self.B, self.Gamma)

    def at_cell(self, DeltaR: float, B: float, Gamma: float) -> "DgpSpec":
        return replace(self, DeltaR=float(DeltaR), B=float(B), Gamma=float(Gamma))

    def profile_value(self, ell: int) -> float:
        """m(ell), zero before adoption and flat after the last listed horizon."""
        if ell < 0:
            return 0.0
        return float(self.m[min(ell, len(self.m) - 1)])

    def effect(self, g: int, ell: int) -> float:
        """tau_g(ell) of the cohort adopting at period g."""
        if self.design == Design.MC84_SMALL:
            return self.tau if ell >= 0 else 0.0
        if self.design == Design.MC85_CONFOUNDED:
            return self.profile.effect(g, ell, self.T) if ell >= 0 else 0.0
        return self.h[self.cohorts.index(g)] * self.profile_value(ell)

    # ====== SERIALISATION ======

    def to_dict(self) -> Dict[str, Any]:
        """JSON-safe mapping; never-treated adoption is written as None."""
        data = asdict(self)
        data["design"] = self.design.value
        data["adoption_times"] = [None if a == NEVER else int(a) for a in self.adoption_times]
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DgpSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown DGP fields: {sorted(unknown)}")
        values = dict(data)
        if "adoption_times" in values:
            values["adoption_times"] = tuple(
                NEVER if a is None or str(a).lower() in ("inf", "never") else float(a)
                for a in values["adoption_times"]
            )
        if isinstance(values.get("profile"), Mapping):
            profile = {
                key: _as_tuple(value) for key, value in values["profile"].items()
            }
            values["profile"] = ConfoundedProfile(**profile)
        for key, value in list(values.items()):
            if key != "profile":
                values[key] = _as_tuple(value)
        return cls(**values)


def _as_tuple(value):
    if isinstance(value, (list, tuple)):
        return tuple(_as_tuple(v) for v in value)
    return value


# ====== VIOLATION TERM ======

def _pre_normaliser(A: int, T: int) -> float:
    return float(np.mean([(t - 1) / (T - 1) for t in range(1, A)])) if A > 1 else 0.0


def _post_normaliser(A: int, T: int) -> float:
    return float(np.mean([(t - A) / (T - 1) for t in range(A, T + 1)]))


def violation_term(spec: DgpSpec, adoption: float, t: int) -> float:
    """
    v_it for a unit adopting at ``adoption`` in period t.

    Pre-adoption cells carry DeltaR B ((t-1)/(T-1) - tbar_pre), post cells
    Gamma ((t-A)/(T-1) - tbar_post), both signed by the cohort; zero for
    never-treated units.
    """
    if not spec.is_mc81:
        raise UnsupportedSpec(
            f"violation term is defined for MC81 designs, not {spec.design.value}",
            details={"design": spec.design.value},
        )
    if adoption == NEVER:
        return 0.0
    A, T = int(adoption), spec.T
    sign = spec.signs[spec.cohorts.index(A)]
    if t < A:
        return sign * spec.DeltaR * spec.B * ((t - 1) / (T - 1) - _pre_normaliser(A, T))
    return sign * spec.Gamma * ((t - A) / (T - 1) - _post_normaliser(A, T))


def violation_matrix(spec: DgpSpec, adoption: np.ndarray) -> np.ndarray:
    """v_it for every unit and period, built cohort by cohort."""
    v = np.zeros((adoption.size, spec.T))
    for A in spec.cohorts:
        row = np.array([violation_term(spec, A, t) for t in range(1, spec.T + 1)])
        v[adoption == A] = row
    return v


# ====== SIMULATION ======

def spec_rng(spec: DgpSpec) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(spec.seed)))


def _draw_cohorts(spec: DgpSpec, rng: np.random.Generator) -> np.ndarray:
    index = rng.choice(len(spec.adoption_times), size=spec.n, p=np.asarray(spec.shares))
    return np.asarray(spec.adoption_times)[index]


def _effects(spec: DgpSpec, adoption: np.ndarray) -> np.ndarray:
    """tau_{g(i)}(t - A_i) D_it."""
    effects = np.zeros((adoption.size, spec.T))
    for A in spec.cohorts:
        row = np.array([spec.effect(A, t - A) for t in range(1, spec.T + 1)])
        effects[adoption == A] = row
    return effects


def _mc81_shocks(spec: DgpSpec, rng: np.random.Generator) -> np.ndarray:
    n, T = spec.n, spec.T
    if spec.design == Design.MC81_DGP1:
        return rng.standard_normal((n, T))
    if spec.design == Design.MC81_DGP2:
        u = np.empty((n, T))
        u[:, 0] = rng.standard_normal(n)
        innovations = rng.normal(0.0, math.sqrt(1.0 - spec.phi ** 2), size=(n, T - 1))
        for t in range(1, T):
            u[:, t] = spec.phi * u[:, t - 1] + innovations[:, t - 1]
        return u
    return rng.standard_t(spec.nu, size=(n, T))


def _simulate_mc81(spec: DgpSpec, rng: np.random.Generator) -> Panel:
    n, T, s = spec.n, spec.T, spec.noise_scale
    adoption = _draw_cohorts(spec, rng)
    alpha = rng.normal(0.0, spec.sigma_alpha, size=n)
    lam = rng.normal(0.0, spec.sigma_lambda, size=T)
    X = np.empty((n, T))
    X[:, 0] = rng.standard_normal(n)
    xi = rng.standard_normal((n, T - 1))
    for t in range(1, T):
        X[:, t] = spec.rho_x * X[:, t - 1] + xi[:, t - 1]
    u = _mc81_shocks(spec, rng)

    X = s * X
    Y = (
        s * (alpha[:, None] + lam[None, :] + u)
        + spec.beta * X
        + _effects(spec, adoption)
        + violation_matrix(spec, adoption)
    )
    if spec.cohort_trends:
        periods = np.arange(1, T + 1)
        for A, kappa in zip(spec.cohorts, spec.cohort_trends):
            Y[adoption == A] += kappa * periods

    observed = None
    if spec.design == Design.MC81_DGP3:
        eta0, eta1, eta2 = spec.selection
        D = (np.arange(1, T + 1)[None, :] >= adoption[:, None]).astype(float)
        lagged = np.column_stack([np.zeros(n), Y[:, :-1]])
        p = expit(eta0 + eta1 * D + eta2 * lagged)
        observed = rng.random((n, T)) < p
        Y = np.where(observed, Y, np.nan)
    return Panel(outcomes=Y, cohorts=adoption, covariates=X[:, :, None], observed=observed)


def _simulate_mc84(spec: DgpSpec, rng: np.random.Generator) -> Panel:
    """Two equal arms; the treated arm drifts by DeltaR Gamma per period."""
    n, T, s = spec.n, spec.T, spec.noise_scale
    treated = np.arange(n) < n // 2
    adoption = np.where(treated, float(spec.t0), NEVER)
    alpha = rng.standard_normal(n)
    eps = rng.standard_normal((n, T))
    periods = np.arange(1, T + 1)
    drift = spec.DeltaR * spec.Gamma * (periods - 1)
    effect = spec.tau * (periods >= spec.t0)
    Y = s * (alpha[:, None] + eps) + treated[:, None] * (effect + drift)[None, :]
    return Panel(outcomes=Y, cohorts=adoption)


def _cohort_probabilities(profile: ConfoundedProfile, X: np.ndarray) -> np.ndarray:
    features = np.column_stack([np.ones(X.shape[0]), X])
    return softmax(features @ np.asarray(profile.cohort_coefficients).T, axis=1)


def _simulate_mc85(spec: DgpSpec, rng: np.random.Generator) -> Panel:
    n, T, s = spec.n, spec.T, spec.noise_scale
    profile = spec.profile
    chol = np.linalg.cholesky(np.asarray(profile.covariance, dtype=float))
    X = rng.standard_normal((n, profile.dimension)) @ chol.T

    probabilities = _cohort_probabilities(profile, X)
    cumulative = np.cumsum(probabilities, axis=1)
    draws = rng.random(n)
    index = np.minimum((cumulative < draws[:, None]).sum(axis=1), len(spec.adoption_times) - 1)
    adoption = np.asarray(spec.adoption_times)[index]

    mu = rng.normal(0.0, profile.sigma_mu, size=n)
    lam = rng.normal(0.0, profile.sigma_lambda, size=T)
    eta = rng.normal(0.0, profile.sigma_eta, size=(n, T))
    periods = np.arange(1, T + 1, dtype=float)
    level = X @ np.asarray(profile.beta)
    trend = X @ np.asarray(profile.kappa)
    Y = (
        s * (mu[:, None] + lam[None, :] + eta)
        + profile.rho * periods[None, :]
        + level[:, None]
        + periods[None, :] * trend[:, None]
        + _effects(spec, adoption)
    )
    covariates = np.repeat(X[:, None, :], T, axis=1)
    return Panel(outcomes=Y, cohorts=adoption, covariates=covariates)


_SIMULATORS = {
    Design.MC81_DGP1: _simulate_mc81,
    Design.MC81_DGP2: _simulate_mc81,
    Design.MC81_DGP3: _simulate_mc81,
    Design.MC84_SMALL: _simulate_mc84,
    Design.MC85_CONFOUNDED: _simulate_mc85,
}


def simulate(spec: DgpSpec, rng: Optional[np.random.Generator] = None) -> Panel:
    """Draw one panel; ``rng`` defaults to a PCG64 stream seeded by spec.seed."""
    rng = spec_rng(spec) if rng is None else rng
    panel = _SIMULATORS[spec.design](spec, rng)
    logger.debug(f"Simulated {spec.design.value} panel with n={panel.n}, T={panel.T}")
    return panel


# ====== TRUTH ======

@dataclass(frozen=True)
class TrueTargets:
    """
    Known effects of a design.

    Attributes:
        cells: tau_g(ell) for every pooled cohort-horizon pair
        weights: cohort weights of the pooled target
        theta_star: pooled target over the declared horizons
        observable: per-cohort horizons with a cell inside the panel
        theta_observable: pooled target restricted to observable horizons
    """

    cells: Dict[Cell, float]
    weights: Dict[int, float]
    theta_star: float
    observable: Dict[int, Tuple[int, ...]]
    theta_observable: float


def pooled_target(cells: Mapping[Cell, float], weights: Mapping[int, float],
                  horizons: Mapping[int, Tuple[int, ...]]) -> float:
    """sum_g w_g mean_{ell in horizons[g]} theta_{g,ell}."""
    total = 0.0
    for g, w in sorted(weights.items()):
        values = [cells[(g, ell)] for ell in horizons[g]]
        total += w * sum(values) / len(values)
    return float(total)


def population_shares(spec: DgpSpec, nodes: int = 20) -> Dict[float, float]:
    """
    P(G = g) = E_X[softmax(X' gamma)_g] by tensor Gauss-Hermite quadrature
    over X ~ N(0, Sigma_X).
    """
    if spec.design != Design.MC85_CONFOUNDED:
        return {a: s for a, s in zip(spec.adoption_times, spec.shares)}
    profile = spec.profile
    z, w = hermegauss(nodes)
    w = w / math.sqrt(2.0 * math.pi)
    d = profile.dimension
    grids = np.meshgrid(*([z] * d), indexing="ij")
    points = np.column_stack([grid.reshape(-1) for grid in grids])
    weight = np.prod(np.meshgrid(*([w] * d), indexing="ij"), axis=0).reshape(-1)
    chol = np.linalg.cholesky(np.asarray(profile.covariance, dtype=float))
    probabilities = _cohort_probabilities(profile, points @ chol.T)
    shares = weight @ probabilities
    return {a: float(p) for a, p in zip(spec.adoption_times, shares)}


def true_targets(spec: DgpSpec) -> TrueTargets:
    """
    Cohort-horizon effects and the pooled post effect.

    MC81 pools the declared horizons with design-share cohort weights; MC85
    pools k = 0..T-g with population cohort shares. MC84 has a single
    constant effect and is not served here.
    """
    if spec.design == Design.MC84_SMALL:
        raise UnsupportedSpec(
            f"design {spec.design.value} has the constant effect tau={spec.tau}",
            details={"design": spec.design.value, "tau": spec.tau},
        )
    if spec.is_mc81:
        masses = {int(a): s for a, s in zip(spec.adoption_times, spec.shares) if a != NEVER}
        declared = {g: tuple(spec.pooled_horizons) for g in masses}
    else:
        shares = population_shares(spec)
        masses = {int(a): s for a, s in shares.items() if a != NEVER}
        declared = {g: tuple(range(0, spec.T - g + 1)) for g in masses}
    masses = {g: m for g, m in masses.items() if g >= 2}
    total = sum(masses.values())
    weights = {g: m / total for g, m in masses.items()}

    cells = {(g, ell): float(spec.effect(g, ell)) for g in weights for ell in declared[g]}
    observable = {g: tuple(ell for ell in declared[g] if g + ell <= spec.T) for g in weights}
    return TrueTargets(
        cells=cells,
        weights=weights,
        theta_star=pooled_target(cells, weights, declared),
        observable=observable,
        theta_observable=pooled_target(cells, weights, observable),
    )


def benchmark_targets(spec: DgpSpec) -> TrueTargets:
    """True targets for the harness, including the single-cohort MC84 case."""
    if spec.design != Design.MC84_SMALL:
        return true_targets(spec)
    g = int(spec.t0)
    horizons = tuple(ell for ell in spec.pooled_horizons if g + ell <= spec.T)
    cells = {(g, ell): spec.tau for ell in horizons}
    return TrueTargets(cells, {g: 1.0}, spec.tau, {g: horizons}, spec.tau)
