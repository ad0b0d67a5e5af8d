"""Dense embedding primitives: cosine similarity, top-k neighbours, softmax.

An embedding matrix is a plain float64 ndarray of shape (N, d), one row per
entity (class label, sample, or latent feature). `as_embedding_matrix`
validates the invariants once; downstream operations assume them.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "as_embedding_matrix",
    "cosine_similarity",
    "pairwise_similarity",
    "temperature_softmax",
    "l2_normalize_rows",
    "topk_neighbors",
    "TopKNeighborTable",
]


def as_embedding_matrix(data) -> np.ndarray:
    """Validate and return a float64 (N, d) embedding matrix.

    Raises ValueError on wrong rank, empty axes, or non-finite entries.
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"embedding matrix must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"embedding matrix needs N >= 1 and d >= 1, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("embedding matrix contains NaN or Inf entries")
    return arr


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between two vectors, clamped to [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"expected equal-length vectors, got shapes {u.shape} and {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity undefined for a zero-norm vector")
    sim = float(np.dot(u, v) / (nu * nv))
    return min(1.0, max(-1.0, sim))


def l2_normalize_rows(E) -> np.ndarray:
    """Scale every row to unit L2 norm. Raises on zero-norm rows."""
    E = as_embedding_matrix(E)
    norms = np.linalg.norm(E, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise ValueError(f"row {bad[0]} has zero norm, cannot normalize")
    return E / norms[:, None]


def pairwise_similarity(E) -> np.ndarray:
    """All-pairs cosine similarity matrix of the rows of E (N x N)."""
    En = l2_normalize_rows(E)
    return En @ En.T


def temperature_softmax(scores, sharpness: float) -> np.ndarray:
    """Softmax of `sharpness * scores` with max-subtraction for stability.

    Larger sharpness concentrates mass on the highest score.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores must be a non-empty 1-D vector")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    if not sharpness > 0.0:
        raise ValueError(f"sharpness must be positive, got {sharpness}")
    z = sharpness * scores
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass(frozen=True)
class TopKNeighborTable:
    """Per-entity top-k neighbours with similarity scores and draw probabilities.

    indices[i] holds the k nearest entities to entity i (self excluded),
    scores[i] the matching similarities sorted non-increasing, probs[i] the
    softmax-normalized sampling distribution over those neighbours.
    """

    k: int
    indices: np.ndarray  # (N, k) int64
    scores: np.ndarray   # (N, k) float64
    probs: np.ndarray    # (N, k) float64

    def __post_init__(self):
        n = self.indices.shape[0]
        if not (1 <= self.k <= max(n - 1, 1)) or self.indices.shape != (n, self.k):
            raise ValueError(f"inconsistent top-k table: k={self.k}, shape={self.indices.shape}")
        if self.scores.shape != self.indices.shape or self.probs.shape != self.indices.shape:
            raise ValueError("scores/probs shape must match indices")
        if (self.indices == np.arange(n)[:, None]).any():
            raise ValueError("a row lists its own entity as a neighbour")
        if (np.diff(self.scores, axis=1) > 0).any():
            raise ValueError("scores rows must be sorted non-increasing")
        if (self.probs < 0).any() or np.abs(self.probs.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("probs rows must be non-negative and sum to 1")

    @property
    def rows(self) -> int:
        return self.indices.shape[0]


def topk_neighbors(S, k: int, sharpness: float) -> TopKNeighborTable:
    """Extract per-row top-k off-diagonal similarities from a square matrix.

    Ties are broken toward the lower entity index so results are
    reproducible. Row probabilities are `temperature_softmax(scores, sharpness)`.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"similarity matrix must be square, got shape {S.shape}")
    n = S.shape[0]
    if not (1 <= k <= n - 1):
        raise ValueError(f"k must satisfy 1 <= k <= N-1 = {n - 1}, got {k}")

    work = S.copy()
    np.fill_diagonal(work, -np.inf)
    # stable sort on negated scores keeps the lowest index first among ties
    order = np.argsort(-work, axis=1, kind="stable")[:, :k]
    scores = np.take_along_axis(work, order, axis=1)
    probs = np.empty_like(scores)
    for i in range(n):
        probs[i] = temperature_softmax(scores[i], sharpness)
    return TopKNeighborTable(k=k, indices=order.astype(np.int64), scores=scores, probs=probs)
