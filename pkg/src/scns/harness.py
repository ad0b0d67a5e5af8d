"""Desk-scale training harness: supervised, contrastive and distillation loops.

Determinism contract: every source of randomness is a named substream of the
experiment seed (dataset, teacher init, student init/loop, memory init), and
per-batch draws happen only for loss terms that are actually active. Because
disabled terms consume no randomness and contribute no arithmetic, zeroing
any auxiliary weight reproduces the simpler variant's trajectory bit-exactly
at equal seed.

The per-batch loss assembly lives in `_batch_eval`, a pure function of the
model parameters given frozen draws; `preflight_gradient_check` finite-
differences exactly that function on a miniature instance before a run.
"""

import math
import statistics
import time
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import ExperimentConfig
from .data import LabeledDataset, generate_gaussian_mixture, load_feature_csv
from .memory import ContrastMemory, init_memory
from .mlp import MlpEncoder, SgdOptimizer, evaluate
from .sampling import DatasetIndex, NegativeSamplingDistribution, build_class_scns, \
    build_instance_scns, build_uniform, draw_negatives_batch, draw_positives_batch
from .wordvec import load_word_embeddings

__all__ = [
    "MetricsLog",
    "TrainResult",
    "build_dataset",
    "build_sampler",
    "pretrain_teacher",
    "train_supervised",
    "train_kd",
    "preflight_gradient_check",
    "convergence_experiment",
    "ConvergenceResult",
]

# substream tags, fixed so (config, seed) pins every random draw
_DATA_TAG = 11
_TEACHER_TAG = 23
_MODEL_TAG = 37
_MEMORY_TAG = 53


def _stream(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([seed, tag])


@dataclass(frozen=True)
class MetricsRow:
    epoch: int
    train_loss: float
    train_acc: float
    eval_acc: float
    wall_ms: int


@dataclass
class MetricsLog:
    rows: List[MetricsRow]

    def epochs_to_threshold(self, threshold: float) -> float:
        """First epoch whose train accuracy reaches the threshold, else inf."""
        for row in self.rows:
            if row.train_acc >= threshold:
                return float(row.epoch)
        return math.inf

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,train_acc,eval_acc,wall_ms\n")
            for r in self.rows:
                fh.write(f"{r.epoch},{r.train_loss:.9g},{r.train_acc:.9g},"
                         f"{r.eval_acc:.9g},{r.wall_ms}\n")

    def trajectory(self) -> List[Tuple[int, float, float, float]]:
        """Deterministic content (everything except wall-clock timing)."""
        return [(r.epoch, r.train_loss, r.train_acc, r.eval_acc) for r in self.rows]


@dataclass
class TrainResult:
    log: MetricsLog
    encoder: MlpEncoder
    config: ExperimentConfig


# ---------------------------------------------------------------------------
# dataset / sampler assembly
# ---------------------------------------------------------------------------


def build_dataset(cfg: ExperimentConfig) -> Tuple[LabeledDataset, LabeledDataset]:
    """Train and eval splits; for mixtures both come from the same centroids."""
    ds = cfg.dataset
    if ds.kind == "csv":
        train = load_feature_csv(ds.train_csv)
        if ds.eval_csv:
            ev = load_feature_csv(ds.eval_csv)
        else:
            ev = LabeledDataset(x=np.empty((0, train.x.shape[1])),
                                y=np.empty(0, dtype=np.int64), centroids=None)
        return train, ev
    rng = _stream(cfg.seed, _DATA_TAG)
    per = ds.per_class + ds.eval_per_class
    full = generate_gaussian_mixture(ds.classes, per, ds.dim, ds.separation, rng)
    train_idx, eval_idx = [], []
    for c in range(ds.classes):
        block = np.arange(c * per, (c + 1) * per)
        train_idx.append(block[: ds.per_class])
        eval_idx.append(block[ds.per_class:])
    ti = np.concatenate(train_idx)
    ei = np.concatenate(eval_idx)
    train = LabeledDataset(x=full.x[ti], y=full.y[ti], centroids=full.centroids)
    ev = LabeledDataset(x=full.x[ei], y=full.y[ei], centroids=full.centroids)
    return train, ev


def _teacher_features(teacher: MlpEncoder, x: np.ndarray) -> np.ndarray:
    return teacher.forward(x).feat


def build_sampler(cfg: ExperimentConfig, train: LabeledDataset,
                  teacher: Optional[MlpEncoder]) -> NegativeSamplingDistribution:
    """Instantiate the configured negative-sampling distribution."""
    index = DatasetIndex.from_labels(train.y)
    variant = cfg.sampler.variant
    if variant == "uniform":
        return build_uniform(index)
    if variant == "class":
        if cfg.dataset.label_embeddings:
            names = [s.strip() for s in cfg.dataset.class_names.split(",") if s.strip()]
            if len(names) != index.class_count:
                raise ValueError(f"class_names lists {len(names)} labels, dataset has "
                                 f"{index.class_count} classes")
            emb = load_word_embeddings(cfg.dataset.label_embeddings, names)
        elif train.centroids is not None:
            emb = train.centroids
        else:
            raise ValueError("class sampler needs label embeddings: set "
                             "[dataset].label_embeddings or use a synthetic mixture")
        return build_class_scns(emb, index, cfg.sampler.k, cfg.sampler.sharpness)
    if variant == "instance":
        if cfg.sampler.instance_reps == "inputs":
            reps = train.x
        else:
            if teacher is None:
                raise ValueError("instance sampler with teacher representations "
                                 "requires a pretrained teacher")
            reps = _teacher_features(teacher, train.x)
        return build_instance_scns(reps, index, cfg.sampler.k, cfg.sampler.sharpness)
    raise ValueError(f"unknown sampler variant {variant!r}")


# ---------------------------------------------------------------------------
# vectorized batch kernels (scalar contracts live in scns.losses; these are
# the row-parallel forms used by the loop and are tested against them)
# ---------------------------------------------------------------------------


def _log_softmax_rows(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=1, keepdims=True))


def _batch_ce(logits: np.ndarray, targets: np.ndarray, tau: float):
    log_p = _log_softmax_rows(logits / tau)
    n = logits.shape[0]
    value = float(-log_p[np.arange(n), targets].mean())
    grad = np.exp(log_p)
    grad[np.arange(n), targets] -= 1.0
    return value, grad / (tau * n)


def _batch_kld(teacher_logits: np.ndarray, student_logits: np.ndarray, tau: float):
    log_p = _log_softmax_rows(teacher_logits / tau)
    log_q = _log_softmax_rows(student_logits / tau)
    p = np.exp(log_p)
    n = teacher_logits.shape[0]
    value = float((p * (log_p - log_q)).sum(axis=1).mean())
    grad_s = (np.exp(log_q) - p) / (tau * n)
    return value, grad_s


def _batch_infonce(feat_a: np.ndarray, feat_p: np.ndarray, feat_n: np.ndarray,
                   scale: float):
    """Row-wise InfoNCE with the anchor pre-scaled by `scale`.

    feat_n has shape (B, M, d); returns mean loss and gradients w.r.t. the
    raw (unscaled) anchor, the positive and the negatives.
    """
    b = feat_a.shape[0]
    a = scale * feat_a
    pos = (a * feat_p).sum(axis=1, keepdims=True)          # (B, 1)
    neg = np.einsum("bd,bmd->bm", a, feat_n)               # (B, M)
    scores = np.concatenate([pos, neg], axis=1)
    log_w = _log_softmax_rows(scores)
    w = np.exp(log_w)
    value = float(-log_w[:, 0].mean())
    coef = w.copy()
    coef[:, 0] -= 1.0
    coef /= b
    g_a = scale * (coef[:, :1] * feat_p + np.einsum("bm,bmd->bd", coef[:, 1:], feat_n))
    g_p = coef[:, :1] * a
    g_n = coef[:, 1:, None] * a[:, None, :]
    return value, g_a, g_p, g_n


def _batch_pearson(u: np.ndarray, v: np.ndarray):
    """Row-paired correlation coefficients with gradients w.r.t. both sides."""
    uc = u - u.mean(axis=1, keepdims=True)
    vc = v - v.mean(axis=1, keepdims=True)
    su = np.linalg.norm(uc, axis=1, keepdims=True)
    sv = np.linalg.norm(vc, axis=1, keepdims=True)
    if (su == 0.0).any() or (sv == 0.0).any():
        raise ValueError("correlation undefined for a zero-variance feature row")
    rho = (uc * vc).sum(axis=1, keepdims=True) / (su * sv)
    g_u = vc / (su * sv) - rho * uc / (su * su)
    g_v = uc / (su * sv) - rho * vc / (sv * sv)
    return rho[:, 0], g_u, g_v


def _memory_nce_rows(mem: ContrastMemory, feat: np.ndarray, rows: np.ndarray):
    """Mean -log p_row over a batch of queries, gradient w.r.t. the queries."""
    stacked = np.concatenate((mem.V, mem.queue_array()), axis=0)
    logits = (feat @ stacked.T) / mem.tau
    log_p = _log_softmax_rows(logits)
    b = feat.shape[0]
    value = float(-log_p[np.arange(b), rows].mean())
    p = np.exp(log_p)
    grad = (p @ stacked - mem.V[rows]) / (mem.tau * b)
    return value, grad


# ---------------------------------------------------------------------------
# the training loop proper
# ---------------------------------------------------------------------------


@dataclass
class _Terms:
    """Which loss terms are active; which draws each batch must consume."""

    mode: str                 # "supervised" | "kd"
    alpha: float
    infonce_weight: float
    mixup: bool
    beta: float
    gamma_plus: float
    gamma_minus: float
    memory_nce: float

    @property
    def need_pos(self) -> bool:
        return self.infonce_weight > 0.0 or self.gamma_plus > 0.0

    @property
    def need_neg(self) -> bool:
        return self.infonce_weight > 0.0 or self.gamma_minus > 0.0 or self.mixup

    @property
    def memory_backed_negatives(self) -> bool:
        """Negatives come straight from the lookup table (no student forward).

        Only sound when nothing else needs gradients through the negatives:
        with mixup or the negative-pair alignment term active, negatives are
        forwarded and the memory contributes the NCE term and updates only.
        """
        return (self.memory_nce > 0.0 and self.infonce_weight > 0.0
                and not self.mixup and self.gamma_minus == 0.0)


def _terms_from(cfg: ExperimentConfig, mode: str) -> _Terms:
    ls = cfg.loss
    if mode == "supervised" and ls.alpha > 0.0 and not ls.mixup:
        raise ValueError("[loss].alpha > 0 in supervised training requires "
                         "[loss].mixup = true (the weight applies to the mixup term)")
    gp = ls.gamma_plus if mode == "kd" else 0.0
    gm = ls.gamma_minus if mode == "kd" else 0.0
    mem_w = cfg.memory.nce_weight if (mode == "kd" and cfg.memory.enabled) else 0.0
    return _Terms(mode=mode, alpha=ls.alpha, infonce_weight=ls.infonce_weight,
                  mixup=ls.mixup, beta=ls.beta, gamma_plus=gp, gamma_minus=gm,
                  memory_nce=mem_w)


@dataclass
class _BatchDraws:
    anchors: np.ndarray
    positives: Optional[np.ndarray]
    negatives: Optional[np.ndarray]   # (B, M)
    nus: Optional[np.ndarray]         # (B, M)


def _draw_batch(terms: _Terms, cfg: ExperimentConfig, anchors: np.ndarray,
                index: DatasetIndex, dist: Optional[NegativeSamplingDistribution],
                rng: np.random.Generator) -> _BatchDraws:
    pos = neg = nus = None
    if terms.need_pos:
        pos = draw_positives_batch(index, anchors, rng,
                                   layout=dist._layout if dist is not None else None)
    if terms.need_neg:
        neg, _ = draw_negatives_batch(dist, anchors, cfg.loss.negatives, rng)
    if terms.mixup:
        nus = rng.beta(terms.beta, terms.beta, size=neg.shape)
    return _BatchDraws(anchors=anchors, positives=pos, negatives=neg, nus=nus)


@dataclass
class _LoopState:
    model: MlpEncoder
    adapter: Optional[np.ndarray]           # (d_student, d_teacher) or None
    teacher_logits: Optional[np.ndarray]    # (N, C)
    teacher_feat: Optional[np.ndarray]      # (N, d_teacher)
    memory: Optional[ContrastMemory]


def _batch_eval(state: _LoopState, terms: _Terms, cfg: ExperimentConfig,
                train: LabeledDataset, draws: _BatchDraws):
    """Assemble the total loss and parameter gradients for one frozen batch.

    Pure in the model parameters: no randomness, no state mutation. Memory
    rows are read-only here; momentum updates happen in the outer loop.
    """
    model = state.model
    ls = cfg.loss
    b = draws.anchors.size
    m = ls.negatives
    y = train.y

    seg = [draws.anchors]
    if draws.positives is not None:
        seg.append(draws.positives)
    use_mem_negs = state.memory is not None and terms.memory_backed_negatives
    fwd_negs = draws.negatives is not None and not use_mem_negs
    if fwd_negs:
        seg.append(draws.negatives.ravel())
    rows = np.concatenate(seg)
    cache = model.forward(train.x[rows])

    sl_a = slice(0, b)
    off = b
    if draws.positives is not None:
        sl_p = slice(off, off + b)
        off += b
    if fwd_negs:
        sl_n = slice(off, off + b * m)

    dlogits = np.zeros_like(cache.logits)
    dfeat = np.zeros_like(cache.feat)
    dtrunk = np.zeros_like(cache.act[-1])
    grads = model.zero_grads()
    d_adapter = np.zeros_like(state.adapter) if state.adapter is not None else None

    total = 0.0

    # hard-label cross-entropy on the anchors
    ce_w = 1.0 - terms.alpha if terms.alpha > 0.0 else 1.0
    ce_val, ce_grad = _batch_ce(cache.logits[sl_a], y[draws.anchors], ls.tau)
    total += ce_w * ce_val
    dlogits[sl_a] += ce_w * ce_grad

    feat_a = cache.feat[sl_a]
    if draws.negatives is not None:
        if use_mem_negs:
            feat_n = state.memory.V[draws.negatives]          # constants
        else:
            feat_n = cache.feat[sl_n].reshape(b, m, -1)

    # InfoNCE over the metric features
    if terms.infonce_weight > 0.0:
        feat_p = cache.feat[sl_p]
        if terms.mixup:
            mixed = draws.nus[:, :, None] * feat_n + (1.0 - draws.nus[:, :, None]) * feat_a[:, None, :]
            nce_negs = np.concatenate([feat_n, mixed], axis=1)
        else:
            nce_negs = feat_n
        val, g_a, g_p, g_n = _batch_infonce(feat_a, feat_p, nce_negs, ls.nce_scale)
        w = terms.infonce_weight
        total += w * val
        dfeat[sl_a] += w * g_a
        dfeat[sl_p] += w * g_p
        g_orig = g_n[:, :m]
        if terms.mixup:
            g_mix = g_n[:, m:]
            g_orig = g_orig + draws.nus[:, :, None] * g_mix
            dfeat[sl_a] += w * ((1.0 - draws.nus[:, :, None]) * g_mix).sum(axis=1)
        if fwd_negs:
            dfeat[sl_n] += w * g_orig.reshape(b * m, -1)

    # mixup target term: KD mixes teacher logits, supervised mixes one-hots
    if terms.alpha > 0.0 and (terms.mixup or terms.mode == "kd"):
        tau_mix = ls.kd_tau if terms.mode == "kd" else ls.mixup_tau
        if terms.mixup:
            h_a = cache.act[-1][sl_a]
            h_n = cache.act[-1][sl_n].reshape(b, m, -1)
            nus = draws.nus[:, :, None]
            h_mix = (nus * h_n + (1.0 - nus) * h_a[:, None, :]).reshape(b * m, -1)
            wc, bc = model.params[-4], model.params[-3]
            s_mix_logits = h_mix @ wc + bc
            if terms.mode == "kd":
                t_rows = state.teacher_logits
                t_mix = (draws.nus[:, :, None] * t_rows[draws.negatives]
                         + (1.0 - draws.nus[:, :, None]) * t_rows[draws.anchors][:, None, :])
            else:
                eye = np.eye(model.n_classes)
                t_mix = (draws.nus[:, :, None] * eye[y[draws.negatives]]
                         + (1.0 - draws.nus[:, :, None]) * eye[y[draws.anchors]][:, None, :])
            val, g_s = _batch_kld(t_mix.reshape(b * m, -1), s_mix_logits, tau_mix)
            w = terms.alpha * tau_mix * tau_mix
            total += w * val
            g_s *= w
            grads[-4] += h_mix.T @ g_s
            grads[-3] += g_s.sum(axis=0)
            dh_mix = (g_s @ wc.T).reshape(b, m, -1)
            dtrunk[sl_n] += (nus * dh_mix).reshape(b * m, -1)
            dtrunk[sl_a] += ((1.0 - nus) * dh_mix).sum(axis=1)
        else:
            # plain soft-target distillation on the anchors
            val, g_s = _batch_kld(state.teacher_logits[draws.anchors],
                                  cache.logits[sl_a], ls.kd_tau)
            w = terms.alpha * ls.kd_tau * ls.kd_tau
            total += w * val
            dlogits[sl_a] += w * g_s

    # representation-alignment rewards on positive / negative pairs
    if terms.gamma_plus > 0.0 or terms.gamma_minus > 0.0:
        t_feat = state.teacher_feat

        def student_to_teacher(f):
            return f @ state.adapter if state.adapter is not None else f

        if terms.gamma_plus > 0.0:
            sp = student_to_teacher(cache.feat[sl_p])
            rho, g_u, _ = _batch_pearson(sp, t_feat[draws.positives])
            total -= terms.gamma_plus * float(rho.mean())
            g_u *= -terms.gamma_plus / b
            if state.adapter is not None:
                d_adapter += cache.feat[sl_p].T @ g_u
                dfeat[sl_p] += g_u @ state.adapter.T
            else:
                dfeat[sl_p] += g_u
        if terms.gamma_minus > 0.0 and fwd_negs:
            sn = student_to_teacher(cache.feat[sl_n])
            rho, g_u, _ = _batch_pearson(sn, t_feat[draws.negatives.ravel()])
            total -= terms.gamma_minus * float(rho.mean())
            g_u *= -terms.gamma_minus / (b * m)
            if state.adapter is not None:
                d_adapter += cache.feat[sl_n].T @ g_u
                dfeat[sl_n] += g_u @ state.adapter.T
            else:
                dfeat[sl_n] += g_u

    # memory-bank NCE on the anchors
    if terms.memory_nce > 0.0 and state.memory is not None:
        val, g = _memory_nce_rows(state.memory, feat_a, draws.anchors)
        total += terms.memory_nce * val
        dfeat[sl_a] += terms.memory_nce * g

    model.backward(cache, grads, dlogits=dlogits, dfeat=dfeat, dtrunk=dtrunk)
    return total, grads, d_adapter, cache.feat[sl_a]


def _lr_at(cfg: ExperimentConfig, epoch: int) -> float:
    opt = cfg.optimizer
    if opt.lr_decay_every <= 0:
        return opt.lr
    return opt.lr * opt.lr_decay_factor ** (epoch // opt.lr_decay_every)


def _run_loop(cfg: ExperimentConfig, train: LabeledDataset, ev: LabeledDataset,
              mode: str, teacher: Optional[MlpEncoder],
              dist: Optional[NegativeSamplingDistribution]) -> TrainResult:
    terms = _terms_from(cfg, mode)
    index = dist.index if dist is not None else DatasetIndex.from_labels(train.y)
    if terms.need_neg and dist is None:
        raise ValueError("active contrastive terms require a sampler distribution")

    rng = _stream(cfg.seed, _MODEL_TAG)
    n_classes = index.class_count
    model = MlpEncoder(train.x.shape[1], cfg.hidden_dims(), n_classes,
                       cfg.optimizer.metric_dim, rng)

    teacher_logits = teacher_feat = None
    adapter = None
    if mode == "kd":
        if teacher is None:
            raise ValueError("train_kd requires a pretrained teacher")
        t_cache = teacher.forward(train.x)
        teacher_logits = t_cache.logits
        teacher_feat = t_cache.feat
        if (terms.gamma_plus > 0.0 or terms.gamma_minus > 0.0) \
                and teacher.metric_dim != model.metric_dim:
            if not cfg.optimizer.adapter:
                raise ValueError(f"teacher metric dim {teacher.metric_dim} != student "
                                 f"{model.metric_dim}; enable [optimizer].adapter")
            adapter = rng.standard_normal((model.metric_dim, teacher.metric_dim)) \
                * math.sqrt(1.0 / model.metric_dim)

    memory = None
    if mode == "kd" and cfg.memory.enabled:
        n_value = cfg.memory.n_value or train.n_samples
        if n_value != train.n_samples:
            raise ValueError(f"[memory].n_value = {n_value} must match the training "
                             f"set size {train.n_samples} (or 0 for automatic)")
        memory = init_memory(n_value, cfg.memory.n_queue, model.metric_dim,
                             cfg.memory.gamma, cfg.memory.tau,
                             _stream(cfg.seed, _MEMORY_TAG))

    params = list(model.params) + ([adapter] if adapter is not None else [])
    opt = SgdOptimizer(params, lr=cfg.optimizer.lr, momentum=cfg.optimizer.momentum,
                       weight_decay=cfg.optimizer.weight_decay)
    state = _LoopState(model=model, adapter=adapter, teacher_logits=teacher_logits,
                       teacher_feat=teacher_feat, memory=memory)

    n = train.n_samples
    bs = cfg.optimizer.batch_size
    log_rows: List[MetricsRow] = []
    for epoch in range(1, cfg.optimizer.epochs + 1):
        t0 = time.perf_counter()
        opt.lr = _lr_at(cfg, epoch - 1)
        perm = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, bs):
            anchors = perm[start: start + bs]
            draws = _draw_batch(terms, cfg, anchors, index, dist, rng)
            loss, grads, d_adapter, feat_a = _batch_eval(state, terms, cfg, train, draws)
            if not math.isfinite(loss):
                raise RuntimeError(f"training diverged: non-finite loss at epoch "
                                   f"{epoch} (lr={opt.lr}, mode={mode})")
            opt.step(grads + ([d_adapter] if adapter is not None else []))
            if memory is not None:
                for row, feat in zip(anchors, feat_a):
                    memory.momentum_update(int(row), feat)
                    memory.enqueue(feat)
            batch_losses.append(loss)
        train_acc = evaluate(model, train.x, train.y)
        eval_acc = evaluate(model, ev.x, ev.y) if ev.n_samples else float("nan")
        wall = int(round((time.perf_counter() - t0) * 1000))
        log_rows.append(MetricsRow(epoch=epoch, train_loss=float(np.mean(batch_losses)),
                                   train_acc=train_acc, eval_acc=eval_acc, wall_ms=wall))
    return TrainResult(log=MetricsLog(rows=log_rows), encoder=model, config=cfg)


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------


def _ce_only(cfg: ExperimentConfig, hidden: str, epochs: int) -> ExperimentConfig:
    sup = replace(cfg, loss=replace(cfg.loss, alpha=0.0, infonce_weight=0.0,
                                    mixup=False, gamma_plus=0.0, gamma_minus=0.0),
                  memory=replace(cfg.memory, enabled=False),
                  optimizer=replace(cfg.optimizer, hidden=hidden, epochs=epochs))
    return sup


def pretrain_teacher(cfg: ExperimentConfig, train: LabeledDataset,
                     ev: LabeledDataset) -> TrainResult:
    """Cross-entropy teacher on the same data, under its own seed substream."""
    tcfg = _ce_only(cfg, hidden=cfg.optimizer.teacher_hidden,
                    epochs=cfg.optimizer.teacher_epochs)
    # teacher runs on its own substream so student streams stay untouched
    return _run_loop_with_rng(tcfg, train, ev, _stream(tcfg.seed, _TEACHER_TAG))


def _run_loop_with_rng(cfg: ExperimentConfig, train: LabeledDataset,
                       ev: LabeledDataset, rng: np.random.Generator) -> TrainResult:
    """CE-only loop variant that takes an explicit generator (teacher path)."""
    model = MlpEncoder(train.x.shape[1], cfg.hidden_dims(),
                       int(train.y.max()) + 1, cfg.optimizer.metric_dim, rng)
    opt = SgdOptimizer(model.params, lr=cfg.optimizer.lr,
                       momentum=cfg.optimizer.momentum,
                       weight_decay=cfg.optimizer.weight_decay)
    n = train.n_samples
    bs = cfg.optimizer.batch_size
    rows: List[MetricsRow] = []
    for epoch in range(1, cfg.optimizer.epochs + 1):
        t0 = time.perf_counter()
        opt.lr = _lr_at(cfg, epoch - 1)
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, bs):
            idx = perm[start: start + bs]
            cache = model.forward(train.x[idx])
            val, g = _batch_ce(cache.logits, train.y[idx], cfg.loss.tau)
            if not math.isfinite(val):
                raise RuntimeError(f"teacher training diverged at epoch {epoch}")
            grads = model.zero_grads()
            model.backward(cache, grads, dlogits=g)
            opt.step(grads)
            losses.append(val)
        train_acc = evaluate(model, train.x, train.y)
        eval_acc = evaluate(model, ev.x, ev.y) if ev.n_samples else float("nan")
        wall = int(round((time.perf_counter() - t0) * 1000))
        rows.append(MetricsRow(epoch=epoch, train_loss=float(np.mean(losses)),
                               train_acc=train_acc, eval_acc=eval_acc, wall_ms=wall))
    return TrainResult(log=MetricsLog(rows=rows), encoder=model, config=cfg)


def _prepare(cfg: ExperimentConfig, mode: str, teacher: Optional[MlpEncoder],
             train: LabeledDataset, ev: LabeledDataset):
    terms = _terms_from(cfg, mode)
    dist = None
    if terms.need_neg:
        sampler_teacher = teacher
        if sampler_teacher is None and cfg.sampler.variant == "instance" \
                and cfg.sampler.instance_reps == "teacher":
            sampler_teacher = pretrain_teacher(cfg, train, ev).encoder
        dist = build_sampler(cfg, train, sampler_teacher)
    elif terms.need_pos:
        # positives only: any layout-bearing distribution will do
        dist = build_uniform(DatasetIndex.from_labels(train.y))
    return dist


def train_supervised(cfg: ExperimentConfig, dataset=None,
                     run_preflight: bool = True) -> TrainResult:
    """Supervised loop: CE plus optional InfoNCE / latent-mixup terms."""
    train, ev = build_dataset(cfg) if dataset is None else dataset
    if run_preflight:
        preflight_gradient_check(cfg, mode="supervised")
    dist = _prepare(cfg, "supervised", None, train, ev)
    return _run_loop(cfg, train, ev, "supervised", None, dist)


def train_kd(cfg: ExperimentConfig, teacher: MlpEncoder, dataset=None,
             run_preflight: bool = True) -> TrainResult:
    """Teacher-student loop: CE, mixup-KLD and alignment terms per config."""
    train, ev = build_dataset(cfg) if dataset is None else dataset
    if run_preflight:
        preflight_gradient_check(cfg, mode="kd")
    dist = _prepare(cfg, "kd", teacher, train, ev)
    return _run_loop(cfg, train, ev, "kd", teacher, dist)


# ---------------------------------------------------------------------------
# preflight: finite-difference the assembled loss on a miniature instance
# ---------------------------------------------------------------------------


def preflight_gradient_check(cfg: ExperimentConfig, mode: str,
                             tolerance: float = 1e-4, attempts: int = 5) -> float:
    """FD-check the exact `_batch_eval` assembly on a tiny frozen instance.

    Returns the max relative error; raises if it exceeds the tolerance.
    Runs before every training entry point, so a mis-assembled gradient can
    never silently shape an experiment. The tiny model can land on genuinely
    non-differentiable points (a ReLU-dead feature row makes the correlation
    terms singular), so up to `attempts` init substreams are tried; a real
    assembly bug fails on all of them.
    """
    last_err: Exception = RuntimeError("no preflight attempt ran")
    for attempt in range(attempts):
        try:
            return _preflight_once(cfg, mode, tolerance, attempt)
        except (ValueError, RuntimeError) as exc:
            last_err = exc
    raise RuntimeError(f"preflight gradient check failed for mode={mode} after "
                       f"{attempts} attempts: {last_err}")


def _preflight_once(cfg: ExperimentConfig, mode: str, tolerance: float,
                    attempt: int) -> float:
    tiny = replace(cfg,
                   dataset=replace(cfg.dataset, kind="gaussian_mixture", classes=3,
                                   per_class=4, dim=5, separation=2.0, eval_per_class=0),
                   optimizer=replace(cfg.optimizer, hidden="8,7", metric_dim=4,
                                     batch_size=6),
                   memory=replace(cfg.memory, n_value=0, n_queue=4))
    rng = _stream(tiny.seed, _DATA_TAG)
    train = generate_gaussian_mixture(3, 4, 5, 2.0, rng)
    index = DatasetIndex.from_labels(train.y)
    terms = _terms_from(tiny, mode)

    # a differing teacher metric dim exercises the adapter path when enabled
    t_metric = 3 if cfg.optimizer.adapter else 4
    teacher = MlpEncoder(5, [7, 6], 3, t_metric,
                         np.random.default_rng([tiny.seed, _TEACHER_TAG, attempt])) \
        if mode == "kd" else None
    model_rng = np.random.default_rng([tiny.seed, _MODEL_TAG, attempt])
    model = MlpEncoder(5, tiny.hidden_dims(), 3, tiny.optimizer.metric_dim, model_rng)

    adapter = None
    if mode == "kd" and (terms.gamma_plus > 0 or terms.gamma_minus > 0) \
            and teacher.metric_dim != model.metric_dim:
        adapter = model_rng.standard_normal((model.metric_dim, teacher.metric_dim)) \
            * math.sqrt(1.0 / model.metric_dim)

    memory = None
    if terms.memory_nce > 0.0:
        memory = init_memory(train.n_samples, tiny.memory.n_queue, model.metric_dim,
                             tiny.memory.gamma, tiny.memory.tau,
                             _stream(tiny.seed, _MEMORY_TAG))
        warm = _stream(tiny.seed, 71)
        for _ in range(2):
            v = warm.standard_normal(model.metric_dim)
            memory.enqueue(v / np.linalg.norm(v))

    dist = None
    if terms.need_neg:
        sub = replace(tiny, sampler=replace(tiny.sampler, k=min(tiny.sampler.k, 2)))
        reps = teacher.forward(train.x).feat if (sub.sampler.variant == "instance"
                                                 and sub.sampler.instance_reps == "teacher"
                                                 and teacher is not None) else train.x
        if sub.sampler.variant == "instance":
            dist = build_instance_scns(reps, index, sub.sampler.k, sub.sampler.sharpness)
        elif sub.sampler.variant == "class":
            dist = build_class_scns(train.centroids, index, sub.sampler.k,
                                    sub.sampler.sharpness)
        else:
            dist = build_uniform(index)
    elif terms.need_pos:
        dist = build_uniform(index)

    t_cache = teacher.forward(train.x) if teacher is not None else None
    state = _LoopState(model=model, adapter=adapter,
                       teacher_logits=t_cache.logits if t_cache else None,
                       teacher_feat=t_cache.feat if t_cache else None,
                       memory=memory)
    anchors = np.arange(6)
    draws = _draw_batch(terms, tiny, anchors, index, dist, model_rng)

    def loss_of(vec: np.ndarray) -> float:
        saved = model.params_vector()
        model.set_params_vector(vec)
        out = _batch_eval(state, terms, tiny, train, draws)[0]
        model.set_params_vector(saved)
        return out

    base = model.params_vector()
    _, grads, d_adapter, _ = _batch_eval(state, terms, tiny, train, draws)
    analytic = np.concatenate([g.ravel() for g in grads])
    step = 1e-6
    numeric = np.empty_like(base)
    for i in range(base.size):
        probe = base.copy()
        probe[i] += step
        f_plus = loss_of(probe)
        probe[i] -= 2 * step
        f_minus = loss_of(probe)
        numeric[i] = (f_plus - f_minus) / (2 * step)
    denom = max(1.0, float(np.abs(analytic).max()), float(np.abs(numeric).max()))
    err = float(np.abs(analytic - numeric).max()) / denom
    if adapter is not None:
        def loss_of_adapter(avec):
            saved = adapter.copy()
            adapter[...] = avec.reshape(adapter.shape)
            out = _batch_eval(state, terms, tiny, train, draws)[0]
            adapter[...] = saved
            return out
        a_num = np.empty(adapter.size)
        flat = adapter.ravel().copy()
        for i in range(adapter.size):
            probe = flat.copy()
            probe[i] += step
            fp = loss_of_adapter(probe)
            probe[i] -= 2 * step
            fm = loss_of_adapter(probe)
            a_num[i] = (fp - fm) / (2 * step)
        a_den = max(1.0, float(np.abs(d_adapter).max()), float(np.abs(a_num).max()))
        err = max(err, float(np.abs(d_adapter.ravel() - a_num).max()) / a_den)
    if err > tolerance:
        raise RuntimeError(f"assembled-loss gradient off by rel error {err:.3g} "
                           f"> {tolerance} for mode={mode}")
    return err


# ---------------------------------------------------------------------------
# convergence comparison experiments
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceResult:
    threshold: float
    entries: List[Tuple[str, int, float]]   # (label, seed, epochs-to-threshold)

    def summary(self) -> Dict[str, Tuple[float, float]]:
        """label -> (median, mean) of epochs-to-threshold across seeds."""
        out: Dict[str, Tuple[float, float]] = {}
        labels = []
        for label, _, _ in self.entries:
            if label not in labels:
                labels.append(label)
        for label in labels:
            vals = [e for (lb, _, e) in self.entries if lb == label]
            out[label] = (float(statistics.median(vals)), float(np.mean(vals)))
        return out

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("config,seed,epochs_to_threshold\n")
            for label, seed, e in self.entries:
                fh.write(f"{label},{seed},{'inf' if math.isinf(e) else int(e)}\n")
            fh.write("config,median,mean\n")
            for label, (med, mean) in self.summary().items():
                fh.write(f"{label},{med:.9g},{mean:.9g}\n")


def convergence_experiment(configs: Sequence[Tuple[str, ExperimentConfig]],
                           threshold: float, seeds: Sequence[int],
                           threads: int = 1) -> ConvergenceResult:
    """Epochs-to-threshold per (config, seed) over a shared dataset grid.

    All configs must declare the same dataset section; each seed generates
    one dataset reused by every config at that seed.
    """
    if not configs:
        raise ValueError("need at least one configuration")
    if not (0.0 <= threshold <= 1.0):
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    base_ds = configs[0][1].dataset
    for label, cfg in configs:
        if cfg.dataset != base_ds:
            raise ValueError(f"config {label!r} declares a different dataset section")

    jobs = [(label, replace(cfg, seed=int(seed)), int(seed))
            for label, cfg in configs for seed in seeds]

    def run(job):
        label, cfg, seed = job
        result = train_supervised(cfg, run_preflight=False)
        return label, seed, result.log.epochs_to_threshold(threshold)

    for label, cfg in configs:
        preflight_gradient_check(cfg, mode="supervised")

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(run, jobs))
    else:
        entries = [run(j) for j in jobs]
    return ConvergenceResult(threshold=threshold, entries=entries)
