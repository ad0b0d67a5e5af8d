"""Pure-numpy backend for the coverage-time simulators.

Bit-compatible with the compiled backend in `_coverage_cy`: both consume the
same counter-based splitmix64 streams (one substream per trial), so a given
(seed, trial) pair sees the identical draw sequence and both backends return
identical count arrays. The vectorization here processes trials in rounds of
growing chunk length, OR-accumulating coverage bitmasks along the draw axis.
"""

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
MAX_DRAWS_PER_TRIAL = 100_000_000


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def trial_seeds(seed: int, trials: int) -> np.ndarray:
    with np.errstate(over="ignore"):
        idx = np.arange(1, trials + 1, dtype=np.uint64)
        return _mix(np.uint64(seed) + idx * GOLDEN)


def _run_rounds(seeds: np.ndarray, bits_of_draws) -> np.ndarray:
    """Advance all trials until their target mask is full.

    bits_of_draws(raw) maps raw 64-bit draws to coverage bits; the caller
    closes over the full-mask value via the second return element.
    """
    to_bits, full = bits_of_draws
    trials = seeds.size
    counts = np.zeros(trials, dtype=np.uint64)
    masks = np.zeros(trials, dtype=np.uint64)
    out = np.zeros(trials, dtype=np.int64)
    active = np.arange(trials)
    chunk = 32
    with np.errstate(over="ignore"):
        while active.size:
            n = active.size
            offs = np.arange(1, chunk + 1, dtype=np.uint64)
            ctr = seeds[active][:, None] + (counts[active][:, None] + offs[None, :]) * GOLDEN
            bits = to_bits(_mix(ctr))
            cum = np.bitwise_or.accumulate(bits, axis=1) | masks[active][:, None]
            done = cum == full
            finished = done[:, -1]
            if finished.any():
                rows = active[finished]
                first = done[finished].argmax(axis=1)
                out[rows] = counts[rows].astype(np.int64) + first + 1
            rest = active[~finished]
            masks[rest] = cum[~finished, -1]
            counts[rest] += np.uint64(chunk)
            if rest.size and int(counts[rest].max()) > MAX_DRAWS_PER_TRIAL:
                raise RuntimeError(f"coverage simulation exceeded {MAX_DRAWS_PER_TRIAL} "
                                   "draws in one trial; check the target probabilities")
            active = rest
            chunk = min(chunk * 2, 4096)
    return out


def uniform_coverage_draws(M: int, k: int, trials: int, seed: int) -> np.ndarray:
    """Draws (uniform over M items) until items 0..k-1 have all been seen."""
    full = np.uint64((1 << k) - 1)
    m64 = np.uint64(M)
    one = np.uint64(1)

    def to_bits(raw):
        idx = raw % m64
        hit = idx < np.uint64(k)
        return np.where(hit, one << np.where(hit, idx, 0), np.uint64(0))

    return _run_rounds(trial_seeds(seed, trials), (to_bits, full))


def categorical_coverage_draws(cdf: np.ndarray, bit_of: np.ndarray, n_target: int,
                               trials: int, seed: int) -> np.ndarray:
    """Categorical draws (inverse CDF) until every target item has been seen.

    cdf is the cumulative probability vector with cdf[-1] == 1.0; bit_of maps
    item index -> coverage bit index, or -1 for non-target items.
    """
    full = np.uint64((1 << n_target) - 1)
    one = np.uint64(1)

    def to_bits(raw):
        u = (raw >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        idx = np.searchsorted(cdf, u.ravel(), side="right").reshape(u.shape)
        b = bit_of[idx]
        hit = b >= 0
        return np.where(hit, one << np.where(hit, b, 0).astype(np.uint64), np.uint64(0))

    return _run_rounds(trial_seeds(seed, trials), (to_bits, full))
