# stagger_lab/conf.py

import json
import os
from contextlib import ContextDecorator
from typing import Any, Dict, Mapping

from .exceptions import ConfigurationError

PREFIX = "STAGGER_LAB_"

DEFAULTS: Dict[str, Any] = {
    "STAGGER_LAB_THREADS": 1,
    "STAGGER_LAB_USE_CELERY": False,
    "STAGGER_LAB_LOG_LEVEL": "INFO",
    "STAGGER_LAB_DEMEAN_TOL": 1e-12,
    "STAGGER_LAB_DEMEAN_MAX_ITER": 10000,
    "STAGGER_LAB_RANK_RTOL": 1e-10,
    "STAGGER_LAB_LOGIT_RIDGE": 1e-8,
    "STAGGER_LAB_LOGIT_TOL": 1e-8,
    "STAGGER_LAB_LOGIT_MAX_ITER": 100,
    "STAGGER_LAB_LP_TOL": 1e-9,
    "STAGGER_LAB_OVERLAP_CLIP": 1e-6,
    "STAGGER_LAB_CROSSFIT_FOLDS": 5,
    "STAGGER_LAB_EPS_TAU": 1e-6,
    "STAGGER_LAB_COVERAGE_FLOOR": 0.90,
    "STAGGER_LAB_LENGTH_CAP": 2.5,
    "STAGGER_LAB_FRONTIER_THRESHOLD": 0.10,
    "STAGGER_LAB_HOLDOUT_QUANTILE": 0.95,
    "STAGGER_LAB_CSV_FLOAT_FORMAT": "%.12g",
}

# Smallest accepted value; float settings not listed must be >= 0.
MINIMUMS = {
    "STAGGER_LAB_THREADS": 1,
    "STAGGER_LAB_DEMEAN_MAX_ITER": 1,
    "STAGGER_LAB_LOGIT_MAX_ITER": 1,
    "STAGGER_LAB_CROSSFIT_FOLDS": 2,
}
PROBABILITIES = {
    "STAGGER_LAB_COVERAGE_FLOOR",
    "STAGGER_LAB_FRONTIER_THRESHOLD",
    "STAGGER_LAB_HOLDOUT_QUANTILE",
}

_TRUE_STRINGS = {"1", "true", "yes", "on"}
_FALSE_STRINGS = {"0", "false", "no", "off"}


def _cast(key: str, raw: str, default: Any) -> Any:
    """Cast an environment string to the type of ``default``."""
    try:
        if isinstance(default, bool):
            lowered = raw.strip().lower()
            if lowered in _TRUE_STRINGS:
                return True
            if lowered in _FALSE_STRINGS:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, (list, dict, tuple)):
            return json.loads(raw)
    except ValueError as exc:
        raise ConfigurationError(f"Invalid value for {key}: {exc}") from exc
    return raw


def _prefixed(key: str) -> str:
    return key if key.startswith(PREFIX) else f"{PREFIX}{key}"


def validate_setting(key: str, value: Any) -> Any:
    """
    Check ``value`` against the type and range of the setting's default and
    return it in that type. Strings are cast the way environment values are.
    """
    if key not in DEFAULTS:
        raise ConfigurationError(f"Unknown setting {key}", details={"choices": sorted(DEFAULTS)})
    default = DEFAULTS[key]
    if isinstance(value, str) and not isinstance(default, str):
        value = _cast(key, value, default)

    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigurationError(
            f"{key} must be {type(default).__name__}, got {value!r}",
            details={"setting": key, "value": repr(value)},
        )
    if isinstance(default, float):
        value = float(value)

    if isinstance(value, (int, float)) and not isinstance(value, bool):
        lower = MINIMUMS.get(key, 0)
        if value < lower or (key in PROBABILITIES and value > 1):
            raise ConfigurationError(
                f"{key} out of range, got {value!r}",
                details={"setting": key, "value": value, "minimum": lower},
            )
    return value


class Settings:
    """
    Layered store behind ``AppSettings``.

    Lookup order: active overrides, values installed with ``configure()``,
    the process environment, then the default. Every layer is validated
    against ``DEFAULTS`` when it is installed or read from the environment.
    """

    def __init__(self):
        self._configured: Dict[str, Any] = {}
        self._overrides: list = []

    def configure(self, mapping: Mapping[str, Any]) -> None:
        """Install settings from a mapping; keys may omit the prefix."""
        validated = {
            _prefixed(key): validate_setting(_prefixed(key), value) for key, value in mapping.items()
        }
        self._configured.update(validated)

    def reset(self) -> None:
        self._configured.clear()

    def get(self, key: str, default: Any = None) -> Any:
        for layer in reversed(self._overrides):
            if key in layer:
                return layer[key]
        if key in self._configured:
            return self._configured[key]
        raw = os.environ.get(key)
        if raw is not None and raw != "":
            if key in DEFAULTS:
                return validate_setting(key, raw)
            return _cast(key, raw, default)
        return default

    def __getattr__(self, key: str) -> Any:
        if not key.startswith(PREFIX):
            raise AttributeError(key)
        sentinel = object()
        value = self.get(key, sentinel)
        if value is sentinel:
            raise AttributeError(key)
        return value


settings = Settings()


def configure(mapping: Mapping[str, Any]) -> None:
    settings.configure(mapping)


def _setting(name: str) -> Any:
    key = f"{PREFIX}{name}"
    return settings.get(key, DEFAULTS[key])


class override_settings(ContextDecorator):
    """
    Temporarily override settings, usable as decorator or context manager.
    Keys may omit the prefix; values are validated on entry.

    Example:
        @override_settings(STAGGER_LAB_USE_CELERY=False)
        def test_sync_path(self): ...
    """

    def __init__(self, **kwargs):
        self.values = {_prefixed(key): value for key, value in kwargs.items()}

    def __enter__(self):
        layer = {key: validate_setting(key, value) for key, value in self.values.items()}
        settings._overrides.append(layer)
        return self

    def __exit__(self, *exc):
        settings._overrides.pop()
        return False


class AppSettings:
    """
    Settings for the stagger-lab package.
    Every setting can be overridden with a STAGGER_LAB_ prefixed key, either in
    the "settings" object of a JSON config document or in the environment.
    """

    # ====== EXECUTION SETTINGS ======

    @property
    def THREADS(self):
        """
        Worker threads for replication and grid loops.
        Default is 1. Results never depend on this value.
        """
        return _setting("THREADS")

    @property
    def USE_CELERY(self):
        """
        Dispatch Monte Carlo cells to Celery workers when available.
        Default is False.
        """
        return _setting("USE_CELERY")

    @property
    def LOG_LEVEL(self):
        """
        Level used when the command line configures logging.
        Default is "INFO".
        """
        return _setting("LOG_LEVEL")

    # ====== NUMERICAL KERNEL SETTINGS ======

    @property
    def DEMEAN_TOL(self):
        """
        Sup-norm change, relative to the input scale, that stops two-way demeaning.
        Default is 1e-12.
        """
        return _setting("DEMEAN_TOL")

    @property
    def DEMEAN_MAX_ITER(self):
        """
        Iteration cap for alternating projections.
        Default is 10000.
        """
        return _setting("DEMEAN_MAX_ITER")

    @property
    def RANK_RTOL(self):
        """
        Relative pivot size below which a column counts as collinear.
        Default is 1e-10.
        """
        return _setting("RANK_RTOL")

    @property
    def LOGIT_RIDGE(self):
        """
        Ridge penalty of the logistic fit (separation guard).
        Default is 1e-8.
        """
        return _setting("LOGIT_RIDGE")

    @property
    def LOGIT_TOL(self):
        """
        Gradient sup-norm at which IRLS stops.
        Default is 1e-8.
        """
        return _setting("LOGIT_TOL")

    @property
    def LOGIT_MAX_ITER(self):
        """
        IRLS iteration cap.
        Default is 100.
        """
        return _setting("LOGIT_MAX_ITER")

    @property
    def LP_TOL(self):
        """
        Pivot and feasibility tolerance of the simplex solver.
        Default is 1e-9.
        """
        return _setting("LP_TOL")

    # ====== ESTIMATION SETTINGS ======

    @property
    def OVERLAP_CLIP(self):
        """
        Propensities at or above 1 - OVERLAP_CLIP are an overlap failure.
        Default is 1e-6.
        """
        return _setting("OVERLAP_CLIP")

    @property
    def CROSSFIT_FOLDS(self):
        """
        Default fold count for cross-fitted scores.
        Default is 5.
        """
        return _setting("CROSSFIT_FOLDS")

    # ====== SENSITIVITY SETTINGS ======

    @property
    def EPS_TAU(self):
        """
        Floor added to |tau_hat| in the drift calibration.
        Default is 1e-6.
        """
        return _setting("EPS_TAU")

    @property
    def COVERAGE_FLOOR(self):
        """
        Minimum coverage for an admissible cell.
        Default is 0.90.
        """
        return _setting("COVERAGE_FLOOR")

    @property
    def LENGTH_CAP(self):
        """
        Maximum interval length, as a multiple of the baseline length.
        Default is 2.5.
        """
        return _setting("LENGTH_CAP")

    @property
    def FRONTIER_THRESHOLD(self):
        """
        Monitored placebo rejection rate that defines the frontier.
        Default is 0.10.
        """
        return _setting("FRONTIER_THRESHOLD")

    @property
    def HOLDOUT_QUANTILE(self):
        """
        Quantile of reference pre-coefficients used by the holdout rule.
        Default is 0.95.
        """
        return _setting("HOLDOUT_QUANTILE")

    # ====== REPORT SETTINGS ======

    @property
    def CSV_FLOAT_FORMAT(self):
        """
        printf-style format for floats in report CSVs.
        Default is "%.12g".
        """
        return _setting("CSV_FLOAT_FORMAT")


app_settings = AppSettings()
