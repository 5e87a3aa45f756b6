# stagger_lab/utils.py

"""
Shared helpers: threaded maps, seed derivation, report writers and checksums.
"""

import hashlib
import logging
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence, TypeVar, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .conf import app_settings

logger = logging.getLogger("stagger_lab")

T = TypeVar("T")
R = TypeVar("R")


# === PARALLEL UTILITIES ===

def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """
    Apply ``fn`` to every item and return results in input order.

    Runs inline for one thread; otherwise uses a joblib thread pool.
    """
    threads = app_settings.THREADS if threads is None else int(threads)
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    return Parallel(n_jobs=threads, prefer="threads")(delayed(fn)(item) for item in items)


# === SEED UTILITIES ===

def derive_seed(base_seed: int, *keys: int) -> np.random.SeedSequence:
    """Seed sequence that depends on (base_seed, keys) only."""
    return np.random.SeedSequence([int(base_seed), *(int(k) for k in keys)])


def replication_rng(base_seed: int, replication: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(base_seed, replication)))


# === REPORT UTILITIES ===

def write_frame(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Write a report CSV with the configured float format and LF endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=app_settings.CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def plot_fragment(x: Sequence[float], y: Sequence[float], series: str) -> pd.DataFrame:
    """Long (x, y, series) table consumed by external plotting."""
    return pd.DataFrame({"x": list(x), "y": list(y), "series": series}, columns=["x", "y", "series"])


def file_checksum(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()
