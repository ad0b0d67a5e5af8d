"""Loader for whitespace-separated word-embedding text files.

Format: a header line `count dim`, then one record per line consisting of a
token followed by `dim` decimal values. Multi-word class labels (split on
spaces, underscores or hyphens) resolve to the mean of their constituent
token vectors unless the full label is itself in the vocabulary.
"""

import re
from typing import Dict, List

import numpy as np

__all__ = ["read_embedding_file", "load_word_embeddings"]


def read_embedding_file(path) -> Dict[str, np.ndarray]:
    """Parse the full token -> vector mapping, validating against the header."""
    with open(path) as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:1: header must be 'count dim', got {header.strip()!r}")
        try:
            count, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValueError(f"{path}:1: header must hold two integers") from None
        if count < 1 or dim < 1:
            raise ValueError(f"{path}:1: count and dim must be >= 1")
        vectors: Dict[str, np.ndarray] = {}
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != dim + 1:
                raise ValueError(f"{path}:{lineno}: expected token plus {dim} values, "
                                 f"got {len(fields) - 1}")
            token = fields[0]
            if token in vectors:
                raise ValueError(f"{path}:{lineno}: duplicate token {token!r}")
            try:
                vectors[token] = np.array([float(v) for v in fields[1:]])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed decimal value") from None
    if len(vectors) != count:
        raise ValueError(f"{path}: header declares {count} records, found {len(vectors)}")
    return vectors


def _constituents(label: str) -> List[str]:
    return [tok for tok in re.split(r"[\s_\-]+", label.strip()) if tok]


def load_word_embeddings(path, labels: List[str]) -> np.ndarray:
    """One embedding row per class label, phrase labels averaged.

    Raises with the full list of unresolvable tokens so a bad label file
    fails in one pass.
    """
    if not labels:
        raise ValueError("labels must be a non-empty list of class names")
    vectors = read_embedding_file(path)
    dim = len(next(iter(vectors.values())))
    rows = np.zeros((len(labels), dim))
    missing: List[str] = []
    for i, label in enumerate(labels):
        if label in vectors:
            rows[i] = vectors[label]
            continue
        toks = _constituents(label)
        absent = [t for t in toks if t not in vectors]
        if absent or not toks:
            missing.extend(absent if absent else [label])
            continue
        rows[i] = np.mean([vectors[t] for t in toks], axis=0)
    if missing:
        raise ValueError("tokens absent from the embedding file: "
                         + ", ".join(sorted(set(missing))))
    return rows
