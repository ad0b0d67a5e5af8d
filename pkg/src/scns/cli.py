"""Batch command-line front end.

Commands: train, kd, sample-audit, theory-ccp, theory-mi, convergence.
Every run writes out/<command>-<seed>/ containing config.resolved, the
command's CSV outputs and summary.json, then prints a one-line summary.
All outputs are reproducible from (command, config, seed); the only
nondeterministic bytes are the wall_ms column of metrics files.
"""

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import harness, theory
from .config import ConfigError, ExperimentConfig, parse_config, serialize_config
from .sampling import draw_negatives_batch, marginal_probs

_AUDIT_TAG = 97


def _load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = parse_config(args.config)
    else:
        if args.seed is None:
            raise ConfigError("seed missing: pass --seed or a config file with a seed")
        cfg = ExperimentConfig(seed=args.seed)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _out_dir(args, command: str, seed: int) -> Path:
    root = Path(args.out) if args.out else Path("out")
    d = root / f"{command}-{seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_run(out: Path, cfg: ExperimentConfig, command: str, summary: dict) -> None:
    resolved = serialize_config(cfg)
    (out / "config.resolved").write_text(resolved)
    payload = {"command": command, "seed": cfg.seed, "config": resolved,
               "summary": summary}
    (out / "summary.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, "train", cfg.seed)
    result = harness.train_supervised(cfg)
    result.log.to_csv(out / "metrics.csv")
    last = result.log.rows[-1]
    summary = {"final_train_acc": last.train_acc, "final_eval_acc": last.eval_acc,
               "epochs": last.epoch,
               "epochs_to_threshold":
                   _finite(result.log.epochs_to_threshold(cfg.optimizer.threshold))}
    _write_run(out, cfg, "train", summary)
    print(f"train seed={cfg.seed} train_acc={last.train_acc:.4f} "
          f"eval_acc={last.eval_acc:.4f} -> {out}")
    return 0


def _cmd_kd(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, "kd", cfg.seed)
    train, ev = harness.build_dataset(cfg)
    teacher = harness.pretrain_teacher(cfg, train, ev)
    teacher.log.to_csv(out / "teacher_metrics.csv")
    result = harness.train_kd(cfg, teacher.encoder, dataset=(train, ev))
    result.log.to_csv(out / "metrics.csv")
    last = result.log.rows[-1]
    tlast = teacher.log.rows[-1]
    summary = {"teacher_eval_acc": tlast.eval_acc, "student_eval_acc": last.eval_acc,
               "student_train_acc": last.train_acc, "epochs": last.epoch}
    _write_run(out, cfg, "kd", summary)
    print(f"kd seed={cfg.seed} teacher={tlast.eval_acc:.4f} "
          f"student={last.eval_acc:.4f} -> {out}")
    return 0


def _cmd_sample_audit(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, "sample-audit", cfg.seed)
    draws_per_anchor = args.trials or 100_000
    train, ev = harness.build_dataset(cfg)
    teacher = None
    if cfg.sampler.variant == "instance" and cfg.sampler.instance_reps == "teacher":
        teacher = harness.pretrain_teacher(cfg, train, ev).encoder
    dist = harness.build_sampler(cfg, train, teacher)
    index = dist.index
    anchors = np.array([members[0] for members in index.class_members if members.size])
    rng = np.random.default_rng([cfg.seed, _AUDIT_TAG])

    rows = []
    worst_p = 1.0
    violations = 0
    for anchor in anchors:
        got, _ = draw_negatives_batch(dist, np.array([anchor]), draws_per_anchor, rng)
        got = got[0]
        violations += int((index.labels[got] == index.labels[anchor]).sum())
        expected = marginal_probs(dist, int(anchor)) * draws_per_anchor
        support = np.flatnonzero(expected > 0)
        observed = np.bincount(got, minlength=index.n_samples)[support]
        chi2, pvalue = stats.chisquare(observed, expected[support])
        worst_p = min(worst_p, pvalue)
        rows.append((int(anchor), int(index.labels[anchor]), draws_per_anchor,
                     chi2, pvalue))
    ok = worst_p > 0.01 and violations == 0
    with open(out / "audit.csv", "w") as fh:
        fh.write("anchor,class,draws,chi2,pvalue\n")
        for a, c, d, chi2, p in rows:
            fh.write(f"{a},{c},{d},{chi2:.9g},{p:.9g}\n")
    summary = {"variant": cfg.sampler.variant, "anchors": len(rows),
               "draws_per_anchor": draws_per_anchor, "min_pvalue": worst_p,
               "same_class_violations": violations, "pass": ok}
    _write_run(out, cfg, "sample-audit", summary)
    verdict = "PASS" if ok else "FAIL"
    print(f"sample-audit {verdict} variant={cfg.sampler.variant} "
          f"min_p={worst_p:.4g} same_class_draws={violations} -> {out}")
    return 0 if ok else 1


def _cmd_theory_ccp(args) -> int:
    cfg = _load_config(args)
    th = cfg.theory
    mode = args.mode or th.mode
    m = args.M or th.m
    k = args.k or th.k
    b = args.b or th.b
    trials = args.trials or th.trials
    out = _out_dir(args, "theory-ccp", cfg.seed)
    if mode == "uniform":
        est = theory.ccp_uniform_draws(m, k, trials=trials, seed=cfg.seed)
        k_or_b = k
    elif mode == "batched":
        est = theory.ccp_batched(m, b, trials=trials, seed=cfg.seed)
        k_or_b = b
    else:
        probs = cfg.theory_probs()
        if not probs:
            raise ConfigError("[theory].probs is required for mode=unequal")
        est = theory.ccp_unequal(probs, trials=trials, seed=cfg.seed)
        m, k_or_b = len(probs), len(probs)
    with open(out / "ccp.csv", "w") as fh:
        fh.write("M,k_or_b,analytic,mc_mean,mc_ci95,trials\n")
        fh.write(f"{m},{k_or_b},{est.analytic:.9g},{est.mc_mean:.9g},"
                 f"{est.mc_ci95:.9g},{est.trials}\n")
    summary = {"mode": mode, "M": m, "k_or_b": k_or_b, "analytic": est.analytic,
               "mc_mean": est.mc_mean, "mc_ci95": est.mc_ci95, "trials": est.trials}
    _write_run(out, cfg, "theory-ccp", summary)
    print(f"theory-ccp mode={mode} M={m} analytic={est.analytic:.6f} "
          f"mc={est.mc_mean:.6f}±{est.mc_ci95:.6f} -> {out}")
    return 0


def _cmd_theory_mi(args) -> int:
    cfg = _load_config(args)
    th = cfg.theory
    loss = args.loss if args.loss is not None else th.loss
    m_max = args.m_max or th.m_max
    out = _out_dir(args, "theory-mi", cfg.seed)
    with open(out / "mi.csv", "w") as fh:
        fh.write("M,loss,bound_uniform\n")
        for m in range(1, m_max + 1):
            fh.write(f"{m},{loss:.9g},{theory.mi_bound_uniform(loss, m):.9g}\n")
    top = theory.mi_bound_uniform(loss, m_max)
    summary = {"loss": loss, "m_max": m_max, "bound_at_m_max": top}
    _write_run(out, cfg, "theory-mi", summary)
    print(f"theory-mi loss={loss} bound(ln M - loss) at M={m_max}: {top:.6f} -> {out}")
    return 0


def _cmd_convergence(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, "convergence", cfg.seed)
    seeds = [cfg.seed + i for i in range(args.seeds)]
    configs = [(v, replace(cfg, sampler=replace(cfg.sampler, variant=v)))
               for v in cfg.sampler_variants()]
    result = harness.convergence_experiment(configs, cfg.optimizer.threshold, seeds,
                                            threads=args.threads)
    result.to_csv(out / "convergence.csv")
    medians = {label: med for label, (med, _) in result.summary().items()}
    summary = {"threshold": cfg.optimizer.threshold, "seeds": seeds,
               "median_epochs": {k: _finite(v) for k, v in medians.items()}}
    _write_run(out, cfg, "convergence", summary)
    parts = " ".join(f"{k}={_finite(v)}" for k, v in medians.items())
    print(f"convergence threshold={cfg.optimizer.threshold} median-epochs {parts} -> {out}")
    return 0


def _finite(v: float):
    return v if math.isfinite(v) else "inf"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scns",
                                     description="Conditioned negative sampling: "
                                                 "training, audits and theory tables")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", help="output root directory (default: out/)")
        p.add_argument("--trials", type=int, help="Monte Carlo trials / audit draws")
        p.add_argument("--threads", type=int, default=1, help="worker threads")

    for name, fn in [("train", _cmd_train), ("kd", _cmd_kd),
                     ("sample-audit", _cmd_sample_audit),
                     ("theory-ccp", _cmd_theory_ccp), ("theory-mi", _cmd_theory_mi),
                     ("convergence", _cmd_convergence)]:
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(fn=fn)
        if name == "theory-ccp":
            p.add_argument("--M", type=int, help="number of items")
            p.add_argument("--k", type=int, help="target subset size (mode=uniform)")
            p.add_argument("--b", type=int, help="batch size (mode=batched)")
            p.add_argument("--mode", choices=["uniform", "batched", "unequal"])
        if name == "theory-mi":
            p.add_argument("--loss", type=float, help="contrastive loss value")
            p.add_argument("--m-max", dest="m_max", type=int,
                           help="tabulate bounds for M = 1..m_max")
        if name == "convergence":
            p.add_argument("--seeds", type=int, default=5,
                           help="number of consecutive seeds starting at --seed")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"scns.config: {exc}", file=sys.stderr)
        return 1
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"scns.{args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
