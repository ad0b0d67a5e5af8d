"""Synthetic dataset generation and feature-matrix loading."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = ["LabeledDataset", "generate_gaussian_mixture", "load_feature_csv"]


@dataclass(frozen=True)
class LabeledDataset:
    x: np.ndarray                    # (N, d) float64 features
    y: np.ndarray                    # (N,) int64 class ids
    centroids: Optional[np.ndarray]  # (C, d) class centres when synthetic

    @property
    def n_samples(self) -> int:
        return self.y.size

    @property
    def n_classes(self) -> int:
        return int(self.y.max()) + 1 if self.y.size else 0


def generate_gaussian_mixture(n_classes: int, n_per_class: int, dim: int,
                              separation: float,
                              rng: np.random.Generator) -> LabeledDataset:
    """Isotropic unit-variance Gaussian blobs around random unit directions.

    Centroids are random unit vectors scaled by `separation`; they double as
    label embeddings for the class-level sampler. separation = 0 collapses
    all classes onto one blob (chance-level task).
    """
    if n_classes < 2 or dim < 2 or n_per_class < 1:
        raise ValueError("need n_classes >= 2, dim >= 2, n_per_class >= 1")
    if separation < 0.0:
        raise ValueError(f"separation must be non-negative, got {separation}")
    dirs = rng.standard_normal((n_classes, dim))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    centroids = dirs * separation
    y = np.repeat(np.arange(n_classes, dtype=np.int64), n_per_class)
    x = centroids[y] + rng.standard_normal((y.size, dim))
    return LabeledDataset(x=x, y=y, centroids=centroids)


def load_feature_csv(path) -> LabeledDataset:
    """Load rows of `label,f1,...,fd` (no header; '#' lines are comments)."""
    xs, ys = [], []
    dim = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) < 2:
                raise ValueError(f"{path}:{lineno}: expected 'label,f1,...', got {line!r}")
            try:
                label = int(parts[0])
                feats = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if label < 0:
                raise ValueError(f"{path}:{lineno}: class ids must be non-negative")
            if dim is None:
                dim = len(feats)
            elif len(feats) != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} features, got {len(feats)}")
            xs.append(feats)
            ys.append(label)
    if not xs:
        raise ValueError(f"{path}: no data rows found")
    return LabeledDataset(x=np.array(xs, dtype=np.float64),
                          y=np.array(ys, dtype=np.int64), centroids=None)
