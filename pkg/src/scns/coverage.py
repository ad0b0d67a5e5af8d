"""Coverage-time Monte Carlo simulators with backend selection.

The draw loops live in a compiled Cython module when available and in a
vectorized numpy module otherwise; both consume identical counter-based
splitmix64 streams, so the active backend never changes results, only speed.
`ACTIVE_BACKEND` names the one selected at import.

Coverage bitmasks cap the designated target set at 63 items, plenty for the
desk-scale analyses these simulators back.
"""

import numpy as np

from . import _coverage_np

try:
    from . import _coverage_cy
    ACTIVE_BACKEND = "compiled"
except ImportError:  # extension not built: pure-Python install
    _coverage_cy = None
    ACTIVE_BACKEND = "python"

__all__ = [
    "ACTIVE_BACKEND",
    "MAX_TARGET_SIZE",
    "uniform_coverage_draws",
    "categorical_coverage_draws",
    "backends",
]

MAX_TARGET_SIZE = 63


def backends():
    """Mapping of backend name -> implementation module (for parity checks)."""
    found = {"python": _coverage_np}
    if _coverage_cy is not None:
        found["compiled"] = _coverage_cy
    return found


def _active():
    return _coverage_cy if ACTIVE_BACKEND == "compiled" else _coverage_np


def uniform_coverage_draws(M: int, k: int, trials: int, seed: int,
                           backend=None) -> np.ndarray:
    """Per-trial draw counts until a designated k-subset of M items is covered.

    Draws are uniform over M items with replacement; by symmetry the target
    subset is taken to be items 0..k-1.
    """
    if not (1 <= k <= M):
        raise ValueError(f"k must satisfy 1 <= k <= M = {M}, got {k}")
    if k > MAX_TARGET_SIZE:
        raise ValueError(f"target set capped at {MAX_TARGET_SIZE} items, got {k}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    impl = backend if backend is not None else _active()
    return impl.uniform_coverage_draws(int(M), int(k), int(trials), int(seed))


def categorical_coverage_draws(probs, target, trials: int, seed: int,
                               backend=None) -> np.ndarray:
    """Per-trial draw counts until every index in `target` has been drawn.

    probs is a categorical distribution over the items; every target item
    must have strictly positive probability.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or probs.size == 0:
        raise ValueError("probs must be a non-empty 1-D vector")
    if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError("probs must be non-negative and sum to 1 within 1e-9")
    target = np.unique(np.asarray(target, dtype=np.int64))
    if target.size == 0:
        raise ValueError("target set must be non-empty")
    if target.size > MAX_TARGET_SIZE:
        raise ValueError(f"target set capped at {MAX_TARGET_SIZE} items, got {target.size}")
    if target.min() < 0 or target.max() >= probs.size:
        raise ValueError("target index out of range")
    if (probs[target] <= 0.0).any():
        bad = target[probs[target] <= 0.0][0]
        raise ValueError(f"target item {bad} has zero probability and is unreachable")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")

    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    bit_of = np.full(probs.size, -1, dtype=np.int64)
    bit_of[target] = np.arange(target.size)
    impl = backend if backend is not None else _active()
    return impl.categorical_coverage_draws(cdf, bit_of, int(target.size),
                                           int(trials), int(seed))
