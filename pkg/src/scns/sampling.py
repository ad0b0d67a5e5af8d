"""Negative-sampling distributions and contrastive batch composition.

Three variants are supported:

* uniform        — negatives drawn uniformly over all other-class samples;
* class_scns     — a neighbour class is drawn from the anchor class's top-k
                   similarity distribution, then a member of that class
                   uniformly;
* instance_scns  — negatives drawn from the anchor sample's own top-k
                   nearest other-class samples.

All draws are i.i.d. with replacement and deterministic given the caller's
`numpy.random.Generator`. Batched draw helpers exist so training loops can
sample whole minibatches without per-anchor Python overhead; `draw_negatives`
is the single-anchor form of the same code path.
"""

import csv
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .embedding import TopKNeighborTable, as_embedding_matrix, pairwise_similarity, \
    temperature_softmax, topk_neighbors

__all__ = [
    "DatasetIndex",
    "NegativeSamplingDistribution",
    "ContrastiveBatch",
    "build_uniform",
    "build_class_scns",
    "build_instance_scns",
    "draw_negatives",
    "draw_negatives_batch",
    "draw_positives_batch",
    "compose_batch",
    "marginal_probs",
    "distribution_to_csv",
]

UNIFORM = "uniform"
CLASS_SCNS = "class_scns"
INSTANCE_SCNS = "instance_scns"


@dataclass(frozen=True)
class DatasetIndex:
    """Per-sample class labels plus the inverse class -> members mapping."""

    labels: np.ndarray              # (N,) int64 class ids
    class_members: List[np.ndarray]  # class id -> sorted sample indices
    class_count: int

    @classmethod
    def from_labels(cls, labels, class_count: Optional[int] = None) -> "DatasetIndex":
        labels = np.asarray(labels, dtype=np.int64)
        if labels.ndim != 1 or labels.size == 0:
            raise ValueError("labels must be a non-empty 1-D integer array")
        if labels.min() < 0:
            raise ValueError("class ids must be non-negative")
        c = int(labels.max()) + 1 if class_count is None else int(class_count)
        if labels.max() >= c:
            raise ValueError(f"label {labels.max()} exceeds class_count {c}")
        members = [np.flatnonzero(labels == k).astype(np.int64) for k in range(c)]
        return cls(labels=labels, class_members=members, class_count=c)

    @property
    def n_samples(self) -> int:
        return self.labels.size

    def __post_init__(self):
        total = sum(m.size for m in self.class_members)
        if total != self.labels.size:
            raise ValueError("class_members must partition the sample indices")


class _Layout:
    """Flattened member/other-class index arrays for vectorized draws."""

    def __init__(self, index: DatasetIndex):
        c = index.class_count
        self.sizes = np.array([m.size for m in index.class_members], dtype=np.int64)
        self.offsets = np.concatenate(([0], np.cumsum(self.sizes)))
        self.members_flat = np.concatenate([m for m in index.class_members]) \
            if index.n_samples else np.empty(0, dtype=np.int64)
        # position of each sample inside its own class list
        self.position = np.empty(index.n_samples, dtype=np.int64)
        for m in index.class_members:
            self.position[m] = np.arange(m.size)
        # per class: every sample of a *different* class
        others = []
        self.other_sizes = np.empty(c, dtype=np.int64)
        all_idx = np.arange(index.n_samples, dtype=np.int64)
        for k in range(c):
            o = all_idx[index.labels != k]
            others.append(o)
            self.other_sizes[k] = o.size
        self.other_offsets = np.concatenate(([0], np.cumsum(self.other_sizes)))
        self.others_flat = np.concatenate(others) if others else np.empty(0, np.int64)


@dataclass(frozen=True)
class NegativeSamplingDistribution:
    """A concrete anchor-conditioned distribution over negative samples."""

    variant: str
    index: DatasetIndex
    table: Optional[TopKNeighborTable] = None
    _layout: _Layout = field(repr=False, default=None)
    _cdf: Optional[np.ndarray] = field(repr=False, default=None)
    _row_valid: Optional[np.ndarray] = field(repr=False, default=None)

    def __post_init__(self):
        if self.variant not in (UNIFORM, CLASS_SCNS, INSTANCE_SCNS):
            raise ValueError(f"unknown sampling variant {self.variant!r}")
        if self.variant == UNIFORM and self.table is not None:
            raise ValueError("uniform sampling carries no neighbour table")
        if self.variant != UNIFORM and self.table is None:
            raise ValueError(f"{self.variant} requires a neighbour table")
        if self._layout is None:
            object.__setattr__(self, "_layout", _Layout(self.index))
        if self.table is not None and self._cdf is None:
            cdf = np.cumsum(self.table.probs, axis=1)
            cdf[:, -1] = 1.0
            object.__setattr__(self, "_cdf", cdf)


def build_uniform(index: DatasetIndex) -> NegativeSamplingDistribution:
    """Baseline: uniform draws over every sample outside the anchor's class."""
    return NegativeSamplingDistribution(variant=UNIFORM, index=index)


def build_class_scns(label_embeddings, index: DatasetIndex, k: int,
                     sharpness: float) -> NegativeSamplingDistribution:
    """Class-level distribution from label-embedding cosine similarities.

    A negative for an anchor of class w is drawn by picking a neighbour
    class from the softmax over w's top-k label similarities, then a member
    of that class uniformly. Neighbour classes without any samples are
    skipped with the row renormalized (a warning is recorded).
    """
    emb = as_embedding_matrix(label_embeddings)
    if emb.shape[0] != index.class_count:
        raise ValueError(f"label embeddings cover {emb.shape[0]} classes, "
                         f"dataset has {index.class_count}")
    c = index.class_count
    if not (1 <= k <= c - 1):
        raise ValueError(f"k must satisfy 1 <= k <= C-1 = {c - 1}, got {k}")
    table = topk_neighbors(pairwise_similarity(emb), k, sharpness)

    sizes = np.array([m.size for m in index.class_members])
    empty = sizes[table.indices] == 0
    probs = table.probs
    row_valid = np.ones(c, dtype=bool)
    if empty.any():
        warnings.warn("class-level sampler: skipping neighbour classes with no samples "
                      f"(rows affected: {np.flatnonzero(empty.any(axis=1)).tolist()})")
        probs = np.where(empty, 0.0, probs)
        row_sums = probs.sum(axis=1)
        row_valid = row_sums > 0.0
        probs = np.divide(probs, np.where(row_valid, row_sums, 1.0)[:, None])
        table = TopKNeighborTable(k=table.k, indices=table.indices,
                                  scores=table.scores,
                                  probs=np.where(row_valid[:, None], probs, 1.0 / k))
    return NegativeSamplingDistribution(variant=CLASS_SCNS, index=index, table=table,
                                        _row_valid=row_valid)


def build_instance_scns(teacher_reps, index: DatasetIndex, k: int,
                        sharpness: float) -> NegativeSamplingDistribution:
    """Instance-level distribution from per-sample representation similarity.

    Same-class samples (and the sample itself) are excluded before the
    top-k cut, so every table entry is a valid negative.
    """
    reps = as_embedding_matrix(teacher_reps)
    n = index.n_samples
    if reps.shape[0] != n:
        raise ValueError(f"teacher reps cover {reps.shape[0]} samples, dataset has {n}")
    if not (1 <= k <= n - 1):
        raise ValueError(f"k must satisfy 1 <= k <= N-1 = {n - 1}, got {k}")

    sim = pairwise_similarity(reps)
    same = index.labels[:, None] == index.labels[None, :]
    sim[same] = -np.inf  # also masks the diagonal
    valid_counts = (~same).sum(axis=1)
    short = np.flatnonzero(valid_counts < k)
    if short.size:
        raise ValueError(f"sample {short[0]} has only {valid_counts[short[0]]} "
                         f"other-class candidates, cannot fill top-{k}")
    order = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    scores = np.take_along_axis(sim, order, axis=1)
    probs = np.empty_like(scores)
    for i in range(n):
        probs[i] = temperature_softmax(scores[i], sharpness)
    table = TopKNeighborTable(k=k, indices=order.astype(np.int64),
                              scores=scores, probs=probs)
    return NegativeSamplingDistribution(variant=INSTANCE_SCNS, index=index, table=table)


def _pick_columns(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF lookup: smallest column with u < cdf (vectorized)."""
    return (u[:, :, None] >= cdf_rows[:, None, :]).sum(axis=2)


def draw_negatives_batch(dist: NegativeSamplingDistribution, anchors, M: int,
                         rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Draw M negatives for each anchor; returns (samples, provenance).

    provenance[b, m] is the neighbour class (class_scns), the sampled
    neighbour itself (instance_scns), or -1 (uniform).
    """
    anchors = np.asarray(anchors, dtype=np.int64)
    if anchors.ndim != 1:
        raise ValueError("anchors must be a 1-D index array")
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if anchors.size and (anchors.min() < 0 or anchors.max() >= dist.index.n_samples):
        raise ValueError("anchor index out of range")
    lay = dist._layout
    w = dist.index.labels[anchors]

    if dist.variant == UNIFORM:
        n_cand = lay.other_sizes[w]
        if (n_cand == 0).any():
            bad = anchors[n_cand == 0][0]
            raise ValueError(f"anchor {bad}: its class has no valid negatives")
        j = rng.integers(0, n_cand[:, None], size=(anchors.size, M))
        samples = lay.others_flat[lay.other_offsets[w][:, None] + j]
        return samples, np.full_like(samples, -1)

    if dist.variant == CLASS_SCNS:
        if dist._row_valid is not None and not dist._row_valid[w].all():
            bad = anchors[~dist._row_valid[w]][0]
            raise ValueError(f"anchor {bad}: its class has no valid negatives")
        u = rng.random((anchors.size, M))
        cols = _pick_columns(dist._cdf[w], u)
        neigh_class = dist.table.indices[w[:, None], cols]
        j = rng.integers(0, lay.sizes[neigh_class])
        samples = lay.members_flat[lay.offsets[neigh_class] + j]
        return samples, neigh_class

    u = rng.random((anchors.size, M))
    cols = _pick_columns(dist._cdf[anchors], u)
    samples = dist.table.indices[anchors[:, None], cols]
    return samples, samples.copy()


def draw_negatives(dist: NegativeSamplingDistribution, anchor_idx: int, M: int,
                   rng: np.random.Generator) -> np.ndarray:
    """M i.i.d. negative sample indices for one anchor."""
    samples, _ = draw_negatives_batch(dist, np.array([anchor_idx]), M, rng)
    return samples[0]


def draw_positives_batch(index: DatasetIndex, anchors, rng: np.random.Generator,
                         layout: Optional[_Layout] = None) -> np.ndarray:
    """One uniformly drawn same-class partner per anchor, never the anchor."""
    anchors = np.asarray(anchors, dtype=np.int64)
    lay = layout if layout is not None else _Layout(index)
    w = index.labels[anchors]
    n_mates = lay.sizes[w] - 1
    if (n_mates == 0).any():
        bad = anchors[n_mates == 0][0]
        raise ValueError(f"anchor {bad}: singleton class has no positive partner")
    j = rng.integers(0, n_mates)
    j = j + (j >= lay.position[anchors])  # skip the anchor's own slot
    return lay.members_flat[lay.offsets[w] + j]


@dataclass(frozen=True)
class ContrastiveBatch:
    """(anchor, positive, M negatives) with per-negative provenance."""

    anchor_idx: int
    positive_idx: int
    negative_idxs: np.ndarray
    provenance: np.ndarray

    def validate(self, index: DatasetIndex) -> None:
        labels = index.labels
        if labels[self.positive_idx] != labels[self.anchor_idx]:
            raise ValueError("positive must share the anchor's class")
        if self.positive_idx == self.anchor_idx:
            raise ValueError("positive must differ from the anchor")
        if (labels[self.negative_idxs] == labels[self.anchor_idx]).any():
            raise ValueError("a negative shares the anchor's class")


def compose_batch(dist: NegativeSamplingDistribution, index: DatasetIndex,
                  anchor_idx: int, M: int, rng: np.random.Generator) -> ContrastiveBatch:
    """Positive drawn uniformly from the anchor's class, negatives via dist.

    Draw order is fixed (positive first, then negatives) so a seeded rng
    reproduces the batch exactly.
    """
    anchors = np.array([anchor_idx], dtype=np.int64)
    pos = draw_positives_batch(index, anchors, rng, layout=dist._layout)
    neg, prov = draw_negatives_batch(dist, anchors, M, rng)
    batch = ContrastiveBatch(anchor_idx=int(anchor_idx), positive_idx=int(pos[0]),
                             negative_idxs=neg[0], provenance=prov[0])
    batch.validate(index)
    return batch


def marginal_probs(dist: NegativeSamplingDistribution, anchor_idx: int) -> np.ndarray:
    """Per-sample probability vector of a single negative draw for an anchor."""
    n = dist.index.n_samples
    out = np.zeros(n)
    w = int(dist.index.labels[anchor_idx])
    lay = dist._layout
    if dist.variant == UNIFORM:
        cands = lay.others_flat[lay.other_offsets[w]: lay.other_offsets[w + 1]]
        if cands.size == 0:
            raise ValueError(f"anchor {anchor_idx}: its class has no valid negatives")
        out[cands] = 1.0 / cands.size
        return out
    if dist.variant == CLASS_SCNS:
        if dist._row_valid is not None and not dist._row_valid[w]:
            raise ValueError(f"anchor {anchor_idx}: its class has no valid negatives")
        for c, p in zip(dist.table.indices[w], dist.table.probs[w]):
            members = dist.index.class_members[c]
            if members.size:
                out[members] += p / members.size
        return out
    np.add.at(out, dist.table.indices[anchor_idx], dist.table.probs[anchor_idx])
    return out


def distribution_to_csv(dist: NegativeSamplingDistribution, path) -> None:
    """Serialize the neighbour table: (row_entity, rank, neighbor, score, prob)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_entity", "rank", "neighbor_entity", "score", "prob"])
        if dist.table is None:
            return
        for i in range(dist.table.rows):
            for r in range(dist.table.k):
                writer.writerow([i, r, int(dist.table.indices[i, r]),
                                 f"{dist.table.scores[i, r]:.9g}",
                                 f"{dist.table.probs[i, r]:.9g}"])
