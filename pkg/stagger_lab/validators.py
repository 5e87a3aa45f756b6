# stagger_lab/validators.py

import math
from typing import Iterable, Sequence

import numpy as np

from .exceptions import EmptyGrid, ValidationError


def validate_nonnegative(value, name: str = "value"):
    """
    Validator for bounds, radii and scales.

    Ensures the value is a finite real number >= 0.
    """
    if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
        raise ValidationError(f"{name} must be a number, got {value!r}")
    if not math.isfinite(value) or value < 0:
        raise ValidationError(f"{name} must be finite and >= 0, got {value!r}")
    return float(value)


def validate_positive(value, name: str = "value"):
    value = validate_nonnegative(value, name)
    if value <= 0:
        raise ValidationError(f"{name} must be > 0, got {value!r}")
    return value


def validate_probability(value, name: str = "alpha"):
    """Ensure a level lies strictly between 0 and 1."""
    value = validate_nonnegative(value, name)
    if not 0.0 < value < 1.0:
        raise ValidationError(f"{name} must lie in (0, 1), got {value!r}")
    return value


def validate_grid(values: Iterable, name: str = "grid", ascending: bool = False):
    """
    Validate a numeric grid.

    Raises EmptyGrid for an empty grid and ValidationError for negative or
    unsorted entries when ``ascending`` is requested.
    """
    grid = [validate_nonnegative(v, name) for v in values]
    if not grid:
        raise EmptyGrid(f"{name} is empty")
    if ascending and any(b < a for a, b in zip(grid, grid[1:])):
        raise ValidationError(f"{name} must be sorted ascending: {grid}")
    return grid


def validate_exposure(weights: Sequence[float]):
    """Exposure weights must be nonnegative with a positive sum."""
    arr = np.asarray(weights, dtype=float)
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise ValidationError("exposure weights must be a finite vector")
    if np.any(arr < 0):
        raise ValidationError("exposure weights must be >= 0")
    if arr.sum() <= 0:
        raise ValidationError("exposure weights must have a positive sum")
    return arr


def validate_finite_matrix(matrix, name: str = "matrix"):
    arr = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr
