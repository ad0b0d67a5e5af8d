"""Strict experiment configuration: parsing, validation, canonical form.

The on-disk format is a small INI dialect: a mandatory top-level `seed`,
then the sections [dataset], [sampler], [loss], [memory], [optimizer],
[theory]. Unknown sections or keys are rejected (nothing is silently
ignored) and every parse or range error cites the key and line number.
`serialize_config` emits the canonical resolved form that runs embed in
their outputs.
"""

from dataclasses import dataclass, field, fields
from typing import List

__all__ = ["ExperimentConfig", "ConfigError", "parse_config", "parse_config_text",
           "serialize_config", "default_config"]


class ConfigError(ValueError):
    pass


@dataclass
class DatasetSpec:
    kind: str = "gaussian_mixture"        # gaussian_mixture | csv
    classes: int = 10
    per_class: int = 500
    dim: int = 32
    separation: float = 3.0
    eval_per_class: int = 100
    train_csv: str = ""
    eval_csv: str = ""
    label_embeddings: str = ""            # word-embedding text file (optional)
    class_names: str = ""                 # comma-separated, for label_embeddings


@dataclass
class SamplerSpec:
    variant: str = "uniform"              # uniform | class | instance
    k: int = 2
    sharpness: float = 5.0
    instance_reps: str = "teacher"        # teacher | inputs
    variants: str = "uniform,class,instance"  # compared by `convergence`


@dataclass
class LossSpec:
    alpha: float = 0.0
    tau: float = 1.0
    kd_tau: float = 4.0
    mixup_tau: float = 0.25
    infonce_weight: float = 0.0
    negatives: int = 5
    nce_scale: float = 1.0
    mixup: bool = False
    beta: float = 0.5
    gamma_plus: float = 0.0
    gamma_minus: float = 0.0
    zeta: float = 0.2
    margin: float = 1.0


@dataclass
class MemorySpec:
    enabled: bool = False
    n_value: int = 0                      # 0 = one row per training sample
    n_queue: int = 64
    gamma: float = 0.5
    tau: float = 0.07
    nce_weight: float = 1.0


@dataclass
class OptimizerSpec:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 30
    batch_size: int = 128
    lr_decay_every: int = 0               # 0 = constant learning rate
    lr_decay_factor: float = 0.1
    hidden: str = "64,64"
    metric_dim: int = 16
    teacher_hidden: str = "128,128"
    teacher_epochs: int = 40
    adapter: bool = False
    threshold: float = 0.95


@dataclass
class TheorySpec:
    mode: str = "uniform"                 # uniform | batched | unequal
    m: int = 10
    k: int = 3
    b: int = 1
    probs: str = ""
    trials: int = 100000
    loss: float = 0.0
    m_max: int = 16


@dataclass
class ExperimentConfig:
    seed: int = 0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    loss: LossSpec = field(default_factory=LossSpec)
    memory: MemorySpec = field(default_factory=MemorySpec)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    theory: TheorySpec = field(default_factory=TheorySpec)

    def hidden_dims(self) -> List[int]:
        return _int_list(self.optimizer.hidden)

    def teacher_hidden_dims(self) -> List[int]:
        return _int_list(self.optimizer.teacher_hidden)

    def sampler_variants(self) -> List[str]:
        return [v.strip() for v in self.sampler.variants.split(",") if v.strip()]

    def theory_probs(self) -> List[float]:
        return [float(v) for v in self.theory.probs.split(",") if v.strip()]


def _int_list(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


_SECTIONS = {"dataset": DatasetSpec, "sampler": SamplerSpec, "loss": LossSpec,
             "memory": MemorySpec, "optimizer": OptimizerSpec, "theory": TheorySpec}
_SECTION_ORDER = ["dataset", "sampler", "loss", "memory", "optimizer", "theory"]

# key -> (predicate, human-readable requirement); checked after type coercion
_RANGES = {
    "dataset.kind": (lambda v: v in ("gaussian_mixture", "csv"),
                     "one of gaussian_mixture|csv"),
    "dataset.classes": (lambda v: v >= 2, ">= 2"),
    "dataset.per_class": (lambda v: v >= 1, ">= 1"),
    "dataset.dim": (lambda v: v >= 2, ">= 2"),
    "dataset.separation": (lambda v: v >= 0.0, ">= 0"),
    "dataset.eval_per_class": (lambda v: v >= 0, ">= 0"),
    "sampler.variant": (lambda v: v in ("uniform", "class", "instance"),
                        "one of uniform|class|instance"),
    "sampler.k": (lambda v: v >= 1, ">= 1"),
    "sampler.sharpness": (lambda v: v > 0.0, "> 0"),
    "sampler.instance_reps": (lambda v: v in ("teacher", "inputs"),
                              "one of teacher|inputs"),
    "loss.alpha": (lambda v: 0.0 <= v <= 1.0, "in [0, 1]"),
    "loss.tau": (lambda v: v > 0.0, "> 0"),
    "loss.kd_tau": (lambda v: v > 0.0, "> 0"),
    "loss.mixup_tau": (lambda v: v > 0.0, "> 0"),
    "loss.infonce_weight": (lambda v: v >= 0.0, ">= 0"),
    "loss.negatives": (lambda v: v >= 1, ">= 1"),
    "loss.nce_scale": (lambda v: v > 0.0, "> 0"),
    "loss.beta": (lambda v: v > 0.0, "> 0"),
    "loss.gamma_plus": (lambda v: v >= 0.0, ">= 0"),
    "loss.gamma_minus": (lambda v: v >= 0.0, ">= 0"),
    "loss.zeta": (lambda v: 0.0 <= v <= 1.0, "in [0, 1]"),
    "loss.margin": (lambda v: v >= 0.0, ">= 0"),
    "memory.n_value": (lambda v: v >= 0, ">= 0"),
    "memory.n_queue": (lambda v: v >= 1, ">= 1"),
    "memory.gamma": (lambda v: 0.0 <= v <= 1.0, "in [0, 1]"),
    "memory.tau": (lambda v: v > 0.0, "> 0"),
    "memory.nce_weight": (lambda v: v >= 0.0, ">= 0"),
    "optimizer.lr": (lambda v: v > 0.0, "> 0"),
    "optimizer.momentum": (lambda v: 0.0 <= v < 1.0, "in [0, 1)"),
    "optimizer.weight_decay": (lambda v: v >= 0.0, ">= 0"),
    "optimizer.epochs": (lambda v: v >= 1, ">= 1"),
    "optimizer.batch_size": (lambda v: v >= 1, ">= 1"),
    "optimizer.lr_decay_every": (lambda v: v >= 0, ">= 0"),
    "optimizer.lr_decay_factor": (lambda v: 0.0 < v <= 1.0, "in (0, 1]"),
    "optimizer.metric_dim": (lambda v: v >= 2, ">= 2"),
    "optimizer.teacher_epochs": (lambda v: v >= 1, ">= 1"),
    "optimizer.threshold": (lambda v: 0.0 <= v <= 1.0, "in [0, 1]"),
    "theory.mode": (lambda v: v in ("uniform", "batched", "unequal"),
                    "one of uniform|batched|unequal"),
    "theory.m": (lambda v: v >= 1, ">= 1"),
    "theory.k": (lambda v: v >= 1, ">= 1"),
    "theory.b": (lambda v: v >= 1, ">= 1"),
    "theory.trials": (lambda v: v >= 1, ">= 1"),
    "theory.m_max": (lambda v: v >= 1, ">= 1"),
}


def _coerce(raw: str, target_type, where: str, lineno: int):
    raw = raw.strip()
    try:
        if target_type is bool:
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: {where}: {exc}") from None


def parse_config_text(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    section = None
    section_fields = {}
    seed_seen = False
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in _SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{name}]")
            section = name
            spec = getattr(cfg, name)
            section_fields = {f.name: f.type for f in fields(spec)}
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if section is None:
            if key != "seed":
                raise ConfigError(f"line {lineno}: unknown top-level key {key!r} "
                                  "(only 'seed' may appear before a section)")
            cfg.seed = _coerce(value, int, "seed", lineno)
            seed_seen = True
            continue
        if key not in section_fields:
            raise ConfigError(f"line {lineno}: unknown key [{section}].{key}")
        ftype = type(getattr(getattr(cfg, section), key))
        val = _coerce(value, ftype, f"[{section}].{key}", lineno)
        full = f"{section}.{key}"
        if full in _RANGES:
            ok, requirement = _RANGES[full]
            if not ok(val):
                raise ConfigError(f"line {lineno}: [{section}].{key} must be "
                                  f"{requirement}, got {value.strip()}")
        setattr(getattr(cfg, section), key, val)
    if not seed_seen:
        raise ConfigError("seed missing: a top-level 'seed = <int>' line is required")
    _cross_validate(cfg)
    return cfg


def _cross_validate(cfg: ExperimentConfig) -> None:
    for name in ("hidden", "teacher_hidden"):
        try:
            dims = _int_list(getattr(cfg.optimizer, name))
        except ValueError:
            raise ConfigError(f"[optimizer].{name} must be a comma-separated int list")
        if not dims or any(d < 1 for d in dims):
            raise ConfigError(f"[optimizer].{name} needs positive layer widths")
    for v in cfg.sampler_variants():
        if v not in ("uniform", "class", "instance"):
            raise ConfigError(f"[sampler].variants: unknown variant {v!r}")
    if cfg.theory.probs:
        try:
            probs = cfg.theory_probs()
        except ValueError:
            raise ConfigError("[theory].probs must be a comma-separated float list")
        if any(p <= 0 for p in probs):
            raise ConfigError("[theory].probs entries must be positive")


def parse_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical resolved form: fixed section and key order, all defaults filled."""
    out = [f"seed = {cfg.seed}"]
    for name in _SECTION_ORDER:
        out.append("")
        out.append(f"[{name}]")
        spec = getattr(cfg, name)
        for f in fields(spec):
            out.append(f"{f.name} = {_fmt(getattr(spec, f.name))}")
    return "\n".join(out) + "\n"


def default_config(seed: int = 0) -> ExperimentConfig:
    return ExperimentConfig(seed=seed)
