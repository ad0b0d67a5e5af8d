"""Momentum lookup table V plus circular FIFO queue Q of negative features.

V holds one unit-norm feature row per tracked entity and is updated with a
momentum rule; Q holds the most recent features. Match probabilities are
softmax-normalized dot products at temperature tau over all V rows and all
queue slots jointly.

Single-writer contract: only the training loop mutates a memory; read-only
queries may run concurrently between updates.
"""

import csv
from typing import Optional

import numpy as np

from .losses import LossEvaluation

__all__ = ["ContrastMemory", "init_memory", "memory_to_csv", "nce_value_and_grad"]


def nce_value_and_grad(values: np.ndarray, queue: np.ndarray, z: np.ndarray,
                       target_row: int, tau: float) -> LossEvaluation:
    """Unconstrained NCE kernel: -log p_target and its gradient w.r.t. z.

    p_i = exp(v_i.z/tau) / (sum_m exp(v_m.z/tau) + sum_n exp(u_n.z/tau)),
    evaluated in the log domain. `ContrastMemory.nce_loss_and_grad` wraps
    this with the unit-norm and bounds validation.
    """
    stacked = np.concatenate((values, queue), axis=0) if queue.size else values
    logits = (stacked @ z) / tau
    m = logits.max()
    log_p = logits - (m + np.log(np.exp(logits - m).sum()))
    p = np.exp(log_p)
    value = float(-log_p[target_row])
    grad = (p @ stacked - values[target_row]) / tau
    return LossEvaluation(value=value, grads={"z": grad})


class ContrastMemory:
    """Value table V (N_v x d_l) and FIFO queue of up to N_q unit vectors."""

    def __init__(self, V: np.ndarray, n_queue: int, gamma: float, tau: float):
        V = np.asarray(V, dtype=np.float64)
        if V.ndim != 2 or V.shape[0] < 1 or V.shape[1] < 1:
            raise ValueError(f"V must be a non-empty 2-D table, got shape {V.shape}")
        if not (0.0 <= gamma <= 1.0):
            raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
        if not tau > 0.0:
            raise ValueError(f"tau must be positive, got {tau}")
        if n_queue < 1:
            raise ValueError(f"queue capacity must be >= 1, got {n_queue}")
        norms = np.linalg.norm(V, axis=1)
        if np.abs(norms - 1.0).max() > 1e-9:
            raise ValueError("V rows must be unit L2 norm")
        self.V = V.copy()
        self.gamma = float(gamma)
        self.tau = float(tau)
        self.n_queue = int(n_queue)
        self._queue = np.empty((n_queue, V.shape[1]), dtype=np.float64)
        self._head = 0  # next write slot
        self._size = 0

    @property
    def n_value(self) -> int:
        return self.V.shape[0]

    @property
    def dim(self) -> int:
        return self.V.shape[1]

    @property
    def queue_size(self) -> int:
        return self._size

    def queue_array(self) -> np.ndarray:
        """Queue contents in FIFO order (oldest first), shape (size, d_l)."""
        if self._size < self.n_queue:
            return self._queue[: self._size].copy()
        idx = (np.arange(self.n_queue) + self._head) % self.n_queue
        return self._queue[idx].copy()

    def _check_unit(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.dim,):
            raise ValueError(f"expected a vector of dim {self.dim}, got shape {z.shape}")
        if abs(np.linalg.norm(z) - 1.0) > 1e-6:
            raise ValueError("query vector must be unit L2 norm")
        return z

    def _log_probs(self, z: np.ndarray) -> np.ndarray:
        """Log softmax over [V rows, queue slots] of dot(., z) / tau."""
        q = self.queue_array()
        logits = np.concatenate((self.V @ z, q @ z)) / self.tau
        m = logits.max()
        return logits - (m + np.log(np.exp(logits - m).sum()))

    def positive_prob(self, z, i: int) -> float:
        """Probability that z matches value row i among all rows and slots."""
        z = self._check_unit(z)
        if not (0 <= i < self.n_value):
            raise ValueError(f"row {i} out of range for table of {self.n_value}")
        return float(np.exp(self._log_probs(z)[i]))

    def negative_prob(self, z, n: int) -> float:
        """Probability that z matches queue slot n (0 = oldest entry)."""
        z = self._check_unit(z)
        if not (0 <= n < self._size):
            raise ValueError(f"queue slot {n} out of range for queue of {self._size}")
        return float(np.exp(self._log_probs(z)[self.n_value + n]))

    def nce_loss_and_grad(self, z, target_row: int) -> LossEvaluation:
        """-log p_target and its gradient w.r.t. the query feature z.

        grad = -(1/tau) [ (1 - p_i) v_i - sum_{j != i} p_j v_j - sum_k q_k u_k ]
        """
        z = self._check_unit(z)
        if not (0 <= target_row < self.n_value):
            raise ValueError(f"row {target_row} out of range for table of {self.n_value}")
        return nce_value_and_grad(self.V, self.queue_array(), z, target_row, self.tau)

    def momentum_update(self, i: int, z) -> None:
        """v_i <- gamma * v_i + (1 - gamma) * z, re-normalized to unit length."""
        z = self._check_unit(z)
        if not (0 <= i < self.n_value):
            raise ValueError(f"row {i} out of range for table of {self.n_value}")
        v = self.gamma * self.V[i] + (1.0 - self.gamma) * z
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            raise ValueError(f"momentum update of row {i} collapsed to zero (antipodal inputs)")
        self.V[i] = v / norm

    def enqueue(self, z) -> None:
        """Append z; once the queue is full the oldest entry is evicted."""
        z = self._check_unit(z)
        self._queue[self._head] = z
        self._head = (self._head + 1) % self.n_queue
        self._size = min(self._size + 1, self.n_queue)


def init_memory(n_value: int, n_queue: int, dim: int, gamma: float, tau: float,
                rng: Optional[np.random.Generator] = None) -> ContrastMemory:
    """Fresh memory with i.i.d. random unit rows in V and an empty queue."""
    if n_value < 1 or dim < 1:
        raise ValueError("n_value and dim must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    V = rng.standard_normal((n_value, dim))
    V /= np.linalg.norm(V, axis=1)[:, None]
    return ContrastMemory(V, n_queue=n_queue, gamma=gamma, tau=tau)


def memory_to_csv(mem: ContrastMemory, path) -> None:
    """Dump the memory state: rows (kind V|Q, slot, d_l feature values)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "slot"] + [f"f{j}" for j in range(mem.dim)])
        for i, row in enumerate(mem.V):
            writer.writerow(["V", i] + [f"{x:.9g}" for x in row])
        for n, row in enumerate(mem.queue_array()):
            writer.writerow(["Q", n] + [f"{x:.9g}" for x in row])
