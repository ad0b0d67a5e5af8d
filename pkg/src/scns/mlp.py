"""Small MLP encoders with manual forward/backward passes.

One shared ReLU trunk feeds two heads: a classifier head producing logits
and a metric head producing L2-normalized features for the contrastive
losses and the contrast memory. Parameters live in a flat list so SGD,
finite-difference checks and text checkpoints all share one layout:
[W1, b1, ..., Wk, bk, W_cls, b_cls, W_met, b_met].
"""

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

__all__ = ["MlpEncoder", "ForwardCache", "SgdOptimizer", "evaluate",
           "save_encoder", "load_encoder"]


@dataclass
class ForwardCache:
    """Everything the backward pass needs: inputs, per-layer pre/post activations."""

    x: np.ndarray
    pre: List[np.ndarray]        # trunk pre-activations s_l
    act: List[np.ndarray]        # trunk post-activations h_l
    logits: np.ndarray
    feat_raw: np.ndarray
    feat: np.ndarray             # row-normalized metric features
    feat_norm: np.ndarray        # per-row norms of feat_raw


class MlpEncoder:
    def __init__(self, in_dim: int, hidden: List[int], n_classes: int,
                 metric_dim: int, rng: np.random.Generator):
        if in_dim < 1 or n_classes < 1 or metric_dim < 1 or not hidden:
            raise ValueError("all encoder dimensions must be >= 1")
        self.in_dim = in_dim
        self.hidden = list(hidden)
        self.n_classes = n_classes
        self.metric_dim = metric_dim
        self.params: List[np.ndarray] = []
        dims = [in_dim] + self.hidden
        for a, b in zip(dims[:-1], dims[1:]):
            self.params.append(rng.standard_normal((a, b)) * math.sqrt(2.0 / a))
            self.params.append(np.zeros(b))
        last = dims[-1]
        self.params.append(rng.standard_normal((last, n_classes)) * math.sqrt(1.0 / last))
        self.params.append(np.zeros(n_classes))
        self.params.append(rng.standard_normal((last, metric_dim)) * math.sqrt(1.0 / last))
        self.params.append(np.zeros(metric_dim))

    @property
    def n_trunk_layers(self) -> int:
        return len(self.hidden)

    def forward(self, x) -> ForwardCache:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.in_dim:
            raise ValueError(f"expected input dim {self.in_dim}, got {x.shape[1]}")
        pre, act = [], []
        a = x
        for l in range(self.n_trunk_layers):
            s = a @ self.params[2 * l] + self.params[2 * l + 1]
            a = np.maximum(s, 0.0)
            pre.append(s)
            act.append(a)
        wc, bc = self.params[-4], self.params[-3]
        wm, bm = self.params[-2], self.params[-1]
        logits = a @ wc + bc
        feat_raw = a @ wm + bm
        norms = np.linalg.norm(feat_raw, axis=1)
        safe = np.where(norms > 0.0, norms, 1.0)
        feat = feat_raw / safe[:, None]
        return ForwardCache(x=x, pre=pre, act=act, logits=logits,
                            feat_raw=feat_raw, feat=feat, feat_norm=safe)

    def zero_grads(self) -> List[np.ndarray]:
        return [np.zeros_like(p) for p in self.params]

    def backward(self, cache: ForwardCache, grads: List[np.ndarray],
                 dlogits: Optional[np.ndarray] = None,
                 dfeat: Optional[np.ndarray] = None,
                 dtrunk: Optional[np.ndarray] = None) -> np.ndarray:
        """Accumulate parameter gradients into `grads`; returns d(input).

        dlogits/dfeat/dtrunk are upstream gradients on the classifier
        logits, the normalized metric features, and the trunk output
        respectively; any of them may be None.
        """
        a_last = cache.act[-1]
        da = np.zeros_like(a_last) if dtrunk is None else dtrunk.copy()
        if dlogits is not None:
            grads[-4] += a_last.T @ dlogits
            grads[-3] += dlogits.sum(axis=0)
            da += dlogits @ self.params[-4].T
        if dfeat is not None:
            # through y = v / ||v||: dv = (dy - y (y . dy)) / ||v||
            inner = (cache.feat * dfeat).sum(axis=1, keepdims=True)
            draw = (dfeat - cache.feat * inner) / cache.feat_norm[:, None]
            grads[-2] += a_last.T @ draw
            grads[-1] += draw.sum(axis=0)
            da += draw @ self.params[-2].T
        for l in range(self.n_trunk_layers - 1, -1, -1):
            ds = da * (cache.pre[l] > 0.0)
            a_prev = cache.x if l == 0 else cache.act[l - 1]
            grads[2 * l] += a_prev.T @ ds
            grads[2 * l + 1] += ds.sum(axis=0)
            da = ds @ self.params[2 * l].T
        return da

    # -- flat parameter vector helpers (checkpoints, gradient checks) -------

    def params_vector(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_params_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        pos = 0
        for p in self.params:
            p[...] = vec[pos: pos + p.size].reshape(p.shape)
            pos += p.size
        if pos != vec.size:
            raise ValueError(f"parameter vector length {vec.size}, expected {pos}")

    def clone(self) -> "MlpEncoder":
        twin = MlpEncoder(self.in_dim, self.hidden, self.n_classes, self.metric_dim,
                          np.random.default_rng(0))
        twin.params = [p.copy() for p in self.params]
        return twin


class SgdOptimizer:
    """SGD with classical momentum; weight decay added to the raw gradient."""

    def __init__(self, params: List[np.ndarray], lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0):
        if not lr > 0.0:
            raise ValueError(f"lr must be positive, got {lr}")
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers = [np.zeros_like(p) for p in params]

    def step(self, grads: List[np.ndarray]) -> None:
        for p, g, buf in zip(self.params, grads, self.buffers):
            eff = g + self.weight_decay * p
            buf *= self.momentum
            buf += eff
            p -= self.lr * buf


def evaluate(encoder: MlpEncoder, x, y) -> float:
    """Classification accuracy; argmax ties resolve to the lowest class id."""
    y = np.asarray(y, dtype=np.int64)
    pred = encoder.forward(x).logits.argmax(axis=1)
    return float((pred == y).mean())


CHECKPOINT_MAGIC = "mlp-checkpoint v1"


def save_encoder(encoder: MlpEncoder, path) -> None:
    """Versioned plain-text checkpoint: header, layer dims, decimal params."""
    with open(path, "w") as fh:
        fh.write(CHECKPOINT_MAGIC + "\n")
        fh.write("trunk " + " ".join(str(d) for d in [encoder.in_dim] + encoder.hidden) + "\n")
        fh.write(f"classes {encoder.n_classes}\n")
        fh.write(f"metric_dim {encoder.metric_dim}\n")
        for p in encoder.params:
            rows, cols = (p.shape[0], p.shape[1]) if p.ndim == 2 else (1, p.shape[0])
            fh.write(f"param {rows} {cols}\n")
            for row in p.reshape(rows, cols):
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_encoder(path) -> MlpEncoder:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a recognized checkpoint (expected '{CHECKPOINT_MAGIC}')")
    trunk = [int(v) for v in lines[1].split()[1:]]
    n_classes = int(lines[2].split()[1])
    metric_dim = int(lines[3].split()[1])
    enc = MlpEncoder(trunk[0], trunk[1:], n_classes, metric_dim, np.random.default_rng(0))
    pos = 4
    for p in enc.params:
        rows, cols = [int(v) for v in lines[pos].split()[1:]]
        block = np.array([[float(v) for v in lines[pos + 1 + r].split()]
                          for r in range(rows)])
        if block.size != p.size:
            raise ValueError("checkpoint parameter block does not match declared dims")
        p[...] = block.reshape(p.shape)
        pos += 1 + rows
    return enc
