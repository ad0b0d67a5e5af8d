"""Mutual-information bound calculators and coupon-collector expectations.

Every analytic coverage expectation is paired with a Monte Carlo estimate of
the same quantity (simulated draw by draw, see `scns.coverage`), reported
with a 95% confidence interval so the two routes can be compared directly.

Logarithms are natural throughout. Both MI bounds are reported in the
`log(.) - loss` orientation; sources differ on the sign of the loss term in
the conditioned-sampling bound, so the two bounds here are deliberately kept
on one convention to stay comparable.
"""

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

from . import coverage
from .embedding import as_embedding_matrix, cosine_similarity
from .sampling import NegativeSamplingDistribution, marginal_probs

__all__ = [
    "AlignmentReport",
    "CcpEstimate",
    "alignment_report",
    "mi_bound_uniform",
    "ccp_uniform_draws",
    "ccp_batched",
    "ccp_unequal",
    "ccp_topk_coverage_mc",
    "harmonic",
    "survival_integral",
]

MAX_BATCHED_M = 25   # alternating-sum conditioning limit for the batch formula
MAX_UNEQUAL_M = 20   # 2^M inclusion-exclusion enumeration limit


def harmonic(n: int) -> float:
    """H_n = sum_{i=1..n} 1/i."""
    return math.fsum(1.0 / i for i in range(1, n + 1))


@dataclass(frozen=True)
class CcpEstimate:
    """Expected draws/batches to cover a target set: analytic + Monte Carlo."""

    analytic: Optional[float]
    mc_mean: float
    mc_ci95: float
    trials: int

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.mc_ci95 < 0.0:
            raise ValueError("confidence half-width must be non-negative")

    def brackets_analytic(self) -> bool:
        """True when the analytic value lies inside the MC 95% interval."""
        if self.analytic is None:
            raise ValueError("no analytic value to bracket")
        return abs(self.mc_mean - self.analytic) <= self.mc_ci95


def _mc_summary(counts: np.ndarray) -> tuple:
    mean = float(counts.mean())
    if counts.size > 1:
        ci = 1.96 * float(counts.std(ddof=1)) / math.sqrt(counts.size)
    else:
        ci = 0.0
    return mean, ci


def ccp_uniform_draws(M: int, k: int, trials: int = 100_000, seed: int = 0) -> CcpEstimate:
    """Expected uniform draws (over M items) to observe a designated k-subset.

    The waiting time decomposes into geometric stages, giving the closed
    form M * H_k; the Monte Carlo side replays literal draw-by-draw
    simulations until the subset is fully seen.
    """
    if not (1 <= k <= M):
        raise ValueError(f"k must satisfy 1 <= k <= M = {M}, got {k}")
    analytic = M * harmonic(k)
    counts = coverage.uniform_coverage_draws(M, k, trials, seed)
    mean, ci = _mc_summary(counts)
    return CcpEstimate(analytic=analytic, mc_mean=mean, mc_ci95=ci, trials=trials)


def _batched_analytic(M: int, b: int) -> float:
    # Exact rational evaluation sidesteps the catastrophic cancellation of
    # the alternating sum; float conversion happens once at the end.
    total = Fraction(0)
    for j in range(M):
        term = Fraction(math.comb(M, j)) / (1 - Fraction(j, M) ** b)
        total += -term if (M - j + 1) % 2 else term
    return float(total)


def ccp_batched(M: int, b: int, trials: int = 100_000, seed: int = 0) -> CcpEstimate:
    """Expected number of size-b uniform batches to observe all M items.

    analytic = sum_{j=0}^{M-1} (-1)^{M-j+1} C(M,j) / (1 - (j/M)^b).
    The alternating sum is ill-conditioned for large M, so the analytic
    route refuses above M = 25; use the Monte Carlo estimate there.
    """
    if M < 1 or b < 1:
        raise ValueError(f"need M >= 1 and b >= 1, got M={M}, b={b}")
    if M > MAX_BATCHED_M:
        raise ValueError(f"batch-coverage analytic sum refused for M={M} > {MAX_BATCHED_M} "
                         "(alternating-sum cancellation); use the Monte Carlo estimate")
    analytic = _batched_analytic(M, b)
    counts = coverage.uniform_coverage_draws(M, M, trials, seed)
    batches = -(-counts // b)  # ceil division: coverage completes mid-batch
    mean, ci = _mc_summary(batches)
    return CcpEstimate(analytic=analytic, mc_mean=mean, mc_ci95=ci, trials=trials)


def survival_integral(probs: np.ndarray) -> float:
    """E[draws] = integral_0^inf (1 - prod_i(1 - e^{-p_i x})) dx."""
    probs = np.asarray(probs, dtype=np.float64)

    def integrand(x):
        return 1.0 - np.prod(-np.expm1(-probs * x))

    # integrate in two pieces: the knee sits near the slowest item's scale
    knee = 10.0 / probs.min()
    head, _ = quad(integrand, 0.0, knee, epsabs=1e-12, epsrel=1e-10, limit=400)
    tail, _ = quad(integrand, knee, np.inf, epsabs=1e-12, epsrel=1e-10, limit=400)
    return head + tail


def _unequal_inclusion_exclusion(probs: np.ndarray) -> float:
    # subset sums and parities built by doubling, subset-bit order
    sums = np.array([0.0])
    parity = np.array([1.0])
    for p in probs:
        sums = np.concatenate([sums, sums + p])
        parity = np.concatenate([parity, -parity])
    # E = sum over non-empty subsets of (-1)^{|S|+1} / sum(S)
    return math.fsum((-parity[1:] / sums[1:]).tolist())


def ccp_unequal(probs, trials: int = 100_000, seed: int = 0) -> CcpEstimate:
    """Expected categorical draws to observe every item at least once.

    For M <= 20 the inclusion-exclusion sum over non-empty subsets is
    evaluated and cross-checked against the survival-integral quadrature
    (they must agree within 1e-6 relative). For larger M only the
    quadrature value is reported.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or probs.size == 0:
        raise ValueError("probs must be a non-empty 1-D vector")
    if (probs <= 0.0).any():
        raise ValueError("all probabilities must be strictly positive")
    if abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError(f"probabilities must sum to 1 within 1e-9, got {probs.sum()!r}")
    m = probs.size

    integral = survival_integral(probs)
    if m <= MAX_UNEQUAL_M:
        analytic = _unequal_inclusion_exclusion(probs)
        rel = abs(analytic - integral) / abs(analytic)
        if rel > 1e-6:
            raise ArithmeticError("inclusion-exclusion and survival-integral routes "
                                  f"disagree ({analytic} vs {integral}, rel {rel:.3g})")
    else:
        analytic = integral

    counts = coverage.categorical_coverage_draws(probs, np.arange(m), trials, seed)
    mean, ci = _mc_summary(counts)
    return CcpEstimate(analytic=analytic, mc_mean=mean, mc_ci95=ci, trials=trials)


def ccp_topk_coverage_mc(dist: NegativeSamplingDistribution, anchor_idx: int,
                         target_set, batch_size: int, trials: int,
                         rng) -> CcpEstimate:
    """Monte Carlo expected batches of negatives until a target set is covered.

    Draws follow the anchor-conditioned marginal of `dist`; there is no
    analytic value for arbitrary sampler/target combinations.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    target = np.unique(np.asarray(target_set, dtype=np.int64))
    if target.size == 0:
        raise ValueError("target set must be non-empty")
    margins = marginal_probs(dist, anchor_idx)
    unreachable = target[margins[target] <= 0.0]
    if unreachable.size:
        raise ValueError(f"target sample {unreachable[0]} has zero probability "
                         "under the distribution")
    seed = int(rng.integers(0, 2 ** 63)) if isinstance(rng, np.random.Generator) else int(rng)
    # restrict the categorical space to reachable samples to keep the CDF short
    support = np.flatnonzero(margins > 0.0)
    remap = -np.ones(margins.size, dtype=np.int64)
    remap[support] = np.arange(support.size)
    counts = coverage.categorical_coverage_draws(margins[support], remap[target],
                                                 trials, seed)
    batches = -(-counts // batch_size)
    mean, ci = _mc_summary(batches)
    return CcpEstimate(analytic=None, mc_mean=mean, mc_ci95=ci, trials=trials)


def mi_bound_uniform(loss: float, M: int) -> float:
    """MI lower bound log(M) - loss for M uniformly drawn negatives."""
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    return math.log(M) - loss


@dataclass(frozen=True)
class AlignmentReport:
    """Expected alignments of top-k vs remaining negatives, and the MI bounds.

    omega_per_anchor = 1 - a_topk / (a_topk + a_rest) quantifies how much
    closer the top-k negatives sit compared to the rest; 0.5 means no
    difference, in which case the conditioned bound equals the uniform one.
    """

    a_topk: float
    a_rest: float
    omega_per_anchor: float
    omega_total: float
    bound_uniform: float
    bound_scns: float

    def __post_init__(self):
        for name in ("a_topk", "a_rest"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not (0.0 <= self.omega_per_anchor <= 1.0):
            raise ValueError(f"omega_per_anchor out of [0, 1]: {self.omega_per_anchor}")


def _default_alignment(u, v) -> float:
    return 0.5 * (cosine_similarity(u, v) + 1.0)


def alignment_report(reps, anchor_idx: int, topk_set, rest_set,
                     alignment_fn: Optional[Callable] = None,
                     loss: float = 0.0) -> AlignmentReport:
    """Alignment weights and MI bounds for one anchor's negative split.

    a_topk and a_rest are the mean alignment of the anchor against the
    top-k set and the remaining negatives; omega_total scales the per-anchor
    weight by the number of negatives considered, M = |topk| + |rest|.
    """
    reps = as_embedding_matrix(reps)
    fn = alignment_fn if alignment_fn is not None else _default_alignment
    topk = np.unique(np.asarray(topk_set, dtype=np.int64))
    rest = np.unique(np.asarray(rest_set, dtype=np.int64))
    if topk.size == 0 or rest.size == 0:
        raise ValueError("topk_set and rest_set must both be non-empty")
    if np.intersect1d(topk, rest).size:
        raise ValueError("topk_set and rest_set must be disjoint")
    if anchor_idx in topk or anchor_idx in rest:
        raise ValueError("the anchor cannot appear among its own negatives")

    def mean_alignment(idx: np.ndarray) -> float:
        vals = [float(fn(reps[anchor_idx], reps[i])) for i in idx]
        for v in vals:
            if not (-1e-12 <= v <= 1.0 + 1e-12):
                raise ValueError(f"alignment function returned {v}, outside [0, 1]")
        return float(np.mean(vals))

    a_topk = mean_alignment(topk)
    a_rest = mean_alignment(rest)
    if a_topk + a_rest == 0.0:
        raise ValueError("degenerate alignments: a_topk + a_rest is zero")
    omega_x = 1.0 - a_topk / (a_topk + a_rest)
    m = topk.size + rest.size
    omega_total = m * omega_x
    if omega_total <= 0.0:
        raise ValueError("degenerate alignment weight: omega_total is zero")
    return AlignmentReport(a_topk=a_topk, a_rest=a_rest,
                           omega_per_anchor=omega_x, omega_total=omega_total,
                           bound_uniform=math.log(m) - loss,
                           bound_scns=math.log(2.0 * omega_total) - loss)
