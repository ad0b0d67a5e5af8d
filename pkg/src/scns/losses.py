"""Training objectives with value-and-gradient contracts.

Every loss returns a `LossEvaluation` holding the scalar value and a dict of
gradients keyed by input name. Gradients are derived analytically and are
validated against central finite differences (see `check_gradient`).

Temperature convention: classification-style losses soften logits as
sigma(z / tau), matching the usual distillation formulation. This is distinct
from the neighbour-table `sharpness` convention in `scns.embedding`.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Mapping

import numpy as np

__all__ = [
    "LossEvaluation",
    "MixupDraw",
    "cross_entropy",
    "kld",
    "kd_combined",
    "infonce",
    "mixup",
    "draw_mixup",
    "mixup_kld",
    "centered_alignment",
    "triplet_cka_loss",
    "pearson_triplet_loss",
    "pearson_correlation",
    "check_gradient",
    "GradientCheckReport",
]


@dataclass(frozen=True)
class LossEvaluation:
    """Scalar loss value plus gradients w.r.t. named representation inputs."""

    value: float
    grads: Dict[str, np.ndarray]


@dataclass(frozen=True)
class MixupDraw:
    """A realized mixup coefficient nu drawn from Beta(beta, beta)."""

    beta: float
    nu: float

    def __post_init__(self):
        if not (0.0 <= self.nu <= 1.0):
            raise ValueError(f"nu must lie in [0, 1], got {self.nu}")


def _as_vector(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D vector, got shape {x.shape}")
    return x


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def cross_entropy(logits, target: int, tau: float = 1.0) -> LossEvaluation:
    """Softmax cross-entropy at temperature tau.

    value = -log softmax(logits / tau)[target]
    d/dlogits = (softmax(logits / tau) - onehot(target)) / tau
    """
    logits = _as_vector(logits, "logits")
    if not tau > 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    if not (0 <= target < logits.size):
        raise ValueError(f"target {target} out of range for {logits.size} classes")
    log_p = _log_softmax(logits / tau)
    grad = (np.exp(log_p) - np.eye(logits.size)[target]) / tau
    return LossEvaluation(value=float(-log_p[target]), grads={"logits": grad})


def kld(teacher_logits, student_logits, tau: float = 1.0) -> LossEvaluation:
    """KL divergence D(teacher || student) between tau-softened logits.

    The teacher side is treated as frozen: the gradient is taken w.r.t.
    the student logits only.
    """
    t = _as_vector(teacher_logits, "teacher_logits")
    s = _as_vector(student_logits, "student_logits")
    if t.size != s.size:
        raise ValueError(f"class counts differ: teacher {t.size} vs student {s.size}")
    if not tau > 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    log_p = _log_softmax(t / tau)
    log_q = _log_softmax(s / tau)
    p = np.exp(log_p)
    value = float(np.dot(p, log_p - log_q))
    grad_s = (np.exp(log_q) - p) / tau
    return LossEvaluation(value=value, grads={"student_logits": grad_s})


def kd_combined(student_logits, teacher_logits, target: int, alpha: float,
                tau: float) -> LossEvaluation:
    """Weighted distillation loss (1-alpha) * CE + alpha * tau^2 * KLD.

    The hard-label cross-entropy term runs at unit temperature; the
    soft-target KLD term runs at tau with the usual tau^2 gradient rescale.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    ce = cross_entropy(student_logits, target, tau=1.0)
    kl = kld(teacher_logits, student_logits, tau=tau)
    value = (1.0 - alpha) * ce.value + alpha * tau * tau * kl.value
    grad = (1.0 - alpha) * ce.grads["logits"] + alpha * tau * tau * kl.grads["student_logits"]
    return LossEvaluation(value=value, grads={"student_logits": grad})


def infonce(z_star, z_plus, negatives) -> LossEvaluation:
    """Contrastive loss -log[ e^{z*.z+} / (e^{z*.z+} + sum_m e^{z*.z-m}) ].

    The denominator sums over all M negatives. Gradients are returned for
    "z_star", "z_plus" and "negatives" (an (M, d) array).
    """
    z_star = _as_vector(z_star, "z_star")
    z_plus = _as_vector(z_plus, "z_plus")
    neg = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if neg.shape[0] == 0:
        raise ValueError("at least one negative is required")
    if z_plus.size != z_star.size or neg.shape[1] != z_star.size:
        raise ValueError("all representations must share one dimensionality")

    scores = np.concatenate(([np.dot(z_star, z_plus)], neg @ z_star))
    log_w = scores - scores.max()
    log_norm = np.log(np.exp(log_w).sum()) + scores.max()
    w = np.exp(scores - log_norm)  # softmax over [positive, negatives]
    value = float(log_norm - scores[0])

    g_star = (w[0] - 1.0) * z_plus + w[1:] @ neg
    g_plus = (w[0] - 1.0) * z_star
    g_neg = w[1:, None] * z_star[None, :]
    return LossEvaluation(value=value, grads={"z_star": g_star, "z_plus": g_plus,
                                              "negatives": g_neg})


def mixup(z_i, z_j, nu: float) -> np.ndarray:
    """Convex interpolation nu * z_i + (1 - nu) * z_j."""
    z_i = np.asarray(z_i, dtype=np.float64)
    z_j = np.asarray(z_j, dtype=np.float64)
    if z_i.shape != z_j.shape:
        raise ValueError(f"shape mismatch: {z_i.shape} vs {z_j.shape}")
    if not (0.0 <= nu <= 1.0):
        raise ValueError(f"nu must lie in [0, 1], got {nu}")
    return nu * z_i + (1.0 - nu) * z_j


def draw_mixup(beta: float, rng: np.random.Generator) -> MixupDraw:
    """Draw a mixup coefficient nu ~ Beta(beta, beta)."""
    if not beta > 0.0:
        raise ValueError(f"beta must be positive for stochastic draws, got {beta}")
    return MixupDraw(beta=beta, nu=float(rng.beta(beta, beta)))


def mixup_kld(student_mix_logits, teacher_mix_target, tau: float) -> LossEvaluation:
    """KLD between softened mixed-teacher target and mixed-student prediction.

    Both inputs are pre-softmax score vectors produced by `mixup` on the
    respective teacher/student quantities; gradient flows to the student
    side only. With nu = 1 this reduces exactly to `kld` on the unmixed pair.
    """
    t = _as_vector(teacher_mix_target, "teacher_mix_target")
    s = _as_vector(student_mix_logits, "student_mix_logits")
    if t.size != s.size:
        raise ValueError(f"class counts differ: teacher {t.size} vs student {s.size}")
    ev = kld(t, s, tau=tau)
    return LossEvaluation(value=ev.value,
                          grads={"student_mix_logits": ev.grads["student_logits"]})


# ---------------------------------------------------------------------------
# Alignment of representation sets (linear CA / kernelized CKA)
# ---------------------------------------------------------------------------


def _as_rep_matrix(Z, name: str) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[None, :]
    if Z.ndim != 2 or Z.shape[0] < 1:
        raise ValueError(f"{name} must be an (M, d) matrix, got shape {Z.shape}")
    return Z


def _rbf_gram(Z: np.ndarray):
    """RBF Gram matrix with bandwidth from the data itself.

    Bandwidth convention: S2 is the population variance of the pairwise
    squared distances (upper triangle), and K = exp(-d2 / (2 * S2)).
    """
    m = Z.shape[0]
    if m < 2:
        raise ValueError("rbf kernel needs at least 2 rows")
    sq = (Z * Z).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (Z @ Z.T), 0.0)
    np.fill_diagonal(d2, 0.0)
    iu = np.triu_indices(m, k=1)
    upper = d2[iu]
    mu = upper.mean()
    s2 = float(((upper - mu) ** 2).mean())
    if s2 == 0.0:
        raise ValueError("degenerate point set: pairwise distances have zero variance")
    k = np.exp(-d2 / (2.0 * s2))
    h = np.eye(m) - np.full((m, m), 1.0 / m)
    kc = h @ k @ h
    cache = {"Z": Z, "d2": d2, "K": k, "S2": s2, "mu": mu, "H": h, "P": upper.size}
    return kc, cache


def _rbf_gram_backward(G: np.ndarray, cache) -> np.ndarray:
    """Backprop dL/dKc -> dL/dZ through centering, kernel and bandwidth."""
    Z, d2, K, s2, mu, h, n_pairs = (cache["Z"], cache["d2"], cache["K"], cache["S2"],
                                    cache["mu"], cache["H"], cache["P"])
    g = h @ G @ h  # through Kc = H K H
    g = 0.5 * (g + g.T)
    # dL/dS2 collects contributions of every ordered off-diagonal entry
    off = ~np.eye(K.shape[0], dtype=bool)
    dl_ds2 = float((g * K * d2)[off].sum()) / (2.0 * s2 * s2)
    w = -g * K / (2.0 * s2)
    # bandwidth path: dS2/d(d2_ab) = 2 (d2_ab - mu) / P per unordered pair,
    # split evenly across the two ordered slots of the full matrix
    w = w + dl_ds2 * (d2 - mu) / n_pairs
    w[~off] = 0.0
    row = w.sum(axis=1)
    return 4.0 * (row[:, None] * Z - w @ Z)


def _gram(Z: np.ndarray, kernel: str):
    if kernel == "linear":
        return Z @ Z.T, {"Z": Z}
    if kernel == "rbf":
        return _rbf_gram(Z)
    raise ValueError(f"unknown kernel {kernel!r} (expected 'linear' or 'rbf')")


def _gram_backward(G: np.ndarray, kernel: str, cache) -> np.ndarray:
    if kernel == "linear":
        return 2.0 * (0.5 * (G + G.T)) @ cache["Z"]
    return _rbf_gram_backward(G, cache)


def _alignment_with_grads(Zi: np.ndarray, Zj: np.ndarray, kernel: str):
    """Alignment value <Ki, Kj> / (||Ki|| ||Kj||) with gradients w.r.t. both."""
    ki, ci = _gram(Zi, kernel)
    kj, cj = _gram(Zj, kernel)
    ni = np.linalg.norm(ki)
    nj = np.linalg.norm(kj)
    if ni == 0.0 or nj == 0.0:
        raise ValueError("alignment undefined: a Gram matrix has zero norm")
    f = float((ki * kj).sum())
    value = f / (ni * nj)
    g_ki = (kj - (f / (ni * ni)) * ki) / (ni * nj)
    g_kj = (ki - (f / (nj * nj)) * kj) / (ni * nj)
    return value, _gram_backward(g_ki, kernel, ci), _gram_backward(g_kj, kernel, cj)


def centered_alignment(Z_i, Z_j, kernel: str = "linear") -> float:
    """Alignment between two sets of representations.

    linear: <vec(Zi Zi^T), vec(Zj Zj^T)> / (||Zi Zi^T||_F ||Zj Zj^T||_F).
    rbf: the same ratio on double-centered RBF Gram matrices.
    """
    Zi = _as_rep_matrix(Z_i, "Z_i")
    Zj = _as_rep_matrix(Z_j, "Z_j")
    if Zi.shape[0] != Zj.shape[0]:
        raise ValueError(f"row counts differ: {Zi.shape[0]} vs {Zj.shape[0]}")
    value, _, _ = _alignment_with_grads(Zi, Zj, kernel)
    return value


def triplet_cka_loss(zS_star, zS_plus, zS_minus, zT_star, zeta: float,
                     margin: float, kernel: str = "linear") -> LossEvaluation:
    """Hinged alignment triplet over student/teacher representation sets.

    pos = CA(zS+, zS*) + CA(zS*, zT*); neg = CA(zS-, zS*) + CA(zS-, zT*);
    loss = max(0, zeta * pos - (1 - zeta) * neg + margin). Gradients cover
    the student inputs; the teacher anchor is frozen. Subgradient at the
    hinge boundary is 0.
    """
    if not (0.0 <= zeta <= 1.0):
        raise ValueError(f"zeta must lie in [0, 1], got {zeta}")
    if margin < 0.0:
        raise ValueError(f"margin must be non-negative, got {margin}")
    s_star = _as_rep_matrix(zS_star, "zS_star")
    s_plus = _as_rep_matrix(zS_plus, "zS_plus")
    s_minus = _as_rep_matrix(zS_minus, "zS_minus")
    t_star = _as_rep_matrix(zT_star, "zT_star")

    a1, d_sp_1, d_ss_1 = _alignment_with_grads(s_plus, s_star, kernel)
    a2, d_ss_2, _ = _alignment_with_grads(s_star, t_star, kernel)
    a3, d_sm_3, d_ss_3 = _alignment_with_grads(s_minus, s_star, kernel)
    a4, d_sm_4, _ = _alignment_with_grads(s_minus, t_star, kernel)

    arg = zeta * (a1 + a2) - (1.0 - zeta) * (a3 + a4) + margin
    if arg <= 0.0:
        zeros = {"zS_star": np.zeros_like(s_star), "zS_plus": np.zeros_like(s_plus),
                 "zS_minus": np.zeros_like(s_minus)}
        return LossEvaluation(value=0.0, grads=zeros)
    grads = {
        "zS_star": zeta * (d_ss_1 + d_ss_2) - (1.0 - zeta) * d_ss_3,
        "zS_plus": zeta * d_sp_1,
        "zS_minus": -(1.0 - zeta) * (d_sm_3 + d_sm_4),
    }
    return LossEvaluation(value=float(arg), grads=grads)


# ---------------------------------------------------------------------------
# Pearson-correlation distillation
# ---------------------------------------------------------------------------


def pearson_correlation(u, v) -> float:
    """Correlation coefficient between two vectors, in [-1, 1]."""
    value, _, _ = _pearson_with_grads(_as_vector(u, "u"), _as_vector(v, "v"))
    return value


def _pearson_with_grads(u: np.ndarray, v: np.ndarray):
    if u.size != v.size or u.size < 2:
        raise ValueError("correlation needs two equal-length vectors of length >= 2")
    uc = u - u.mean()
    vc = v - v.mean()
    su = np.linalg.norm(uc)
    sv = np.linalg.norm(vc)
    if su == 0.0 or sv == 0.0:
        raise ValueError("correlation undefined for a zero-variance vector")
    rho = float(np.dot(uc, vc) / (su * sv))
    g_u = vc / (su * sv) - rho * uc / (su * su)
    g_v = uc / (su * sv) - rho * vc / (sv * sv)
    return rho, g_u, g_v


def pearson_triplet_loss(zS_minus, zS_plus, zT_minus, zT_plus, zeta: float,
                         margin: float) -> LossEvaluation:
    """Hinged correlation triplet over student/teacher representations.

    pos = rho(zS-, zT-) + rho(zS+, zT+); neg = rho(zS-, zS+) + rho(zS-, zT+);
    loss = max(0, zeta * pos - (1 - zeta) * neg + margin). Gradients cover
    the student inputs only.
    """
    if not (0.0 <= zeta <= 1.0):
        raise ValueError(f"zeta must lie in [0, 1], got {zeta}")
    if margin < 0.0:
        raise ValueError(f"margin must be non-negative, got {margin}")
    s_minus = _as_vector(zS_minus, "zS_minus")
    s_plus = _as_vector(zS_plus, "zS_plus")
    t_minus = _as_vector(zT_minus, "zT_minus")
    t_plus = _as_vector(zT_plus, "zT_plus")

    r1, d_sm_1, _ = _pearson_with_grads(s_minus, t_minus)
    r2, d_sp_2, _ = _pearson_with_grads(s_plus, t_plus)
    r3, d_sm_3, d_sp_3 = _pearson_with_grads(s_minus, s_plus)
    r4, d_sm_4, _ = _pearson_with_grads(s_minus, t_plus)

    arg = zeta * (r1 + r2) - (1.0 - zeta) * (r3 + r4) + margin
    if arg <= 0.0:
        return LossEvaluation(value=0.0, grads={"zS_minus": np.zeros_like(s_minus),
                                                "zS_plus": np.zeros_like(s_plus)})
    grads = {
        "zS_minus": zeta * d_sm_1 - (1.0 - zeta) * (d_sm_3 + d_sm_4),
        "zS_plus": zeta * d_sp_2 - (1.0 - zeta) * d_sp_3,
    }
    return LossEvaluation(value=float(arg), grads=grads)


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GradientCheckReport:
    max_rel_error: float
    per_input: Dict[str, float]
    step: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def check_gradient(loss_fn: Callable[[Mapping[str, np.ndarray]], LossEvaluation],
                   inputs: Mapping[str, np.ndarray], step: float = 1e-5,
                   tolerance: float = 1e-6) -> GradientCheckReport:
    """Compare analytic gradients of loss_fn against central finite differences.

    Every input named in the returned gradient dict is perturbed coordinate
    by coordinate. The error metric per input is
    max|analytic - numeric| / max(1, max|analytic|, max|numeric|), which
    stays meaningful for near-zero gradients where finite differences only
    resolve down to rounding noise.
    """
    if not step > 0.0:
        raise ValueError(f"step must be positive, got {step}")
    inputs = {k: np.asarray(v, dtype=np.float64) for k, v in inputs.items()}
    analytic = loss_fn(inputs).grads
    per_input: Dict[str, float] = {}
    for name, grad in analytic.items():
        base = inputs[name]
        numeric = np.zeros_like(base, dtype=np.float64)
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = loss_fn(inputs).value
            flat[i] = orig - step
            f_minus = loss_fn(inputs).value
            flat[i] = orig
            numeric.reshape(-1)[i] = (f_plus - f_minus) / (2.0 * step)
        denom = max(1.0, float(np.abs(grad).max(initial=0.0)),
                    float(np.abs(numeric).max(initial=0.0)))
        per_input[name] = float(np.abs(grad - numeric).max(initial=0.0)) / denom
    worst = max(per_input.values()) if per_input else 0.0
    return GradientCheckReport(max_rel_error=worst, per_input=per_input,
                               step=step, tolerance=tolerance)
