"""Command-line entry point: generate / pretrain / eval / matrix / sweep / suite / plot.

Every command reads a YAML config (with strict schema validation), accepts
dotted --set overrides, and records what it did in a file-locked run
registry (one JSON line per status transition).  Completed work is never
silently redone: pretraining a finished run without --force is refused,
and evaluation results are cached beside their run.

The default output root is $TEMPOSSL_OUT_ROOT, falling back to
./tempossl_out; --out redirects an individual command's artifacts.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

from filelock import FileLock

from . import transforms as tfm
from .config import apply_overrides, config_hash, dump_yaml, from_dict, load_yaml, to_dict
from .evaluation import (
    EvalConfig,
    SuiteConfig,
    comparison_suite,
    lambda_sweep,
    probe_cached,
    task_transfer_matrix,
)
from .training import (
    CHECKPOINT_NAME,
    ExperimentConfig,
    load_checkpoint,
    pretrain,
    resume,
)
from .videodata import SyntheticDataConfig, VideoDataset, make_synthetic_specs, write_manifest
from .rng import named_stream

REGISTRY_NAME = "registry.jsonl"
ENV_OUT_ROOT = "TEMPOSSL_OUT_ROOT"


# ---------------------------------------------------------------------------
# job configs (thin wrappers so each verb has one YAML schema)


@dataclass
class GenerateJob:
    data: SyntheticDataConfig = field(default_factory=SyntheticDataConfig)
    seed: int = 0


@dataclass
class MatrixJob:
    base: ExperimentConfig = field(default_factory=ExperimentConfig)
    kinds: tuple[str, ...] = tfm.DEFAULT_KINDS
    transfer: EvalConfig = field(default_factory=lambda: EvalConfig(
        mode="full_finetune", epochs=8, base_lr=0.02, milestones=(4, 6),
        decay=0.1, weight_decay=1e-4, batch_size=32,
    ))


@dataclass
class SweepJob:
    base: ExperimentConfig = field(default_factory=ExperimentConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    values: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0)


# ---------------------------------------------------------------------------
# registry


def out_root() -> str:
    return os.environ.get(ENV_OUT_ROOT, os.path.join(os.getcwd(), "tempossl_out"))


def registry_append(root: str, run_id: str, cfg_hash: str, status: str, out_dir: str) -> None:
    os.makedirs(root, exist_ok=True)
    path = os.path.join(root, REGISTRY_NAME)
    entry = {
        "run_id": run_id,
        "config_hash": cfg_hash,
        "status": status,
        "out_dir": out_dir,
        "time": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with FileLock(path + ".lock"):
        with open(path, "a") as f:
            f.write(json.dumps(entry) + "\n")


def registry_status(root: str, run_id: str) -> Optional[str]:
    path = os.path.join(root, REGISTRY_NAME)
    if not os.path.exists(path):
        return None
    status = None
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            e = json.loads(line)
            if e["run_id"] == run_id:
                status = e["status"]
    return status


# ---------------------------------------------------------------------------
# helpers


def _load_job(cls, args) -> object:
    if args.config:
        job = load_yaml(cls, args.config)
    else:
        job = cls()
    if args.set:
        job = apply_overrides(job, args.set)
    return job


def _finished(run_dir: str, cfg) -> bool:
    ck = os.path.join(run_dir, CHECKPOINT_NAME)
    if not os.path.exists(ck):
        return False
    try:
        meta = load_checkpoint(ck)
    except Exception:
        return False
    return (
        meta["config_hash"] == config_hash(cfg)
        and meta["epochs_done"] >= cfg.schedule.total_epochs
    )


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    job: GenerateJob = _load_job(GenerateJob, args)
    if args.seed is not None:
        job = dataclasses.replace(job, seed=args.seed)
    job.data.validate()
    out_dir = args.out or os.path.join(out_root(), "datasets", f"synthetic-{config_hash(job)[:10]}")
    os.makedirs(out_dir, exist_ok=True)
    specs = make_synthetic_specs(job.data, named_stream(job.seed, "data"))
    dataset = VideoDataset.from_specs(specs)
    manifest = os.path.join(out_dir, "manifest.jsonl")
    write_manifest(dataset, manifest)
    dump_yaml(job, os.path.join(out_dir, "generate.yaml"))
    print(f"wrote {len(dataset)} video specs to {manifest}")
    return 0


def cmd_pretrain(args) -> int:
    cfg: ExperimentConfig = _load_job(ExperimentConfig, args)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    cfg.validate()
    root = out_root()
    run_id = f"pretrain-{config_hash(cfg)[:10]}"
    run_dir = args.out or os.path.join(root, "runs", run_id)

    if _finished(run_dir, cfg) and not args.force:
        print(
            f"run {run_id} already completed in {run_dir}; use --force to redo",
            file=sys.stderr,
        )
        return 1
    registry_append(root, run_id, config_hash(cfg), "running", run_dir)
    try:
        if args.resume and os.path.exists(os.path.join(run_dir, CHECKPOINT_NAME)) and not args.force:
            path = resume(run_dir)
        else:
            path = pretrain(cfg, run_dir)
    except Exception as e:
        registry_append(root, run_id, config_hash(cfg), "failed", run_dir)
        print(f"run {run_id} failed: {e}", file=sys.stderr)
        return 1
    registry_append(root, run_id, config_hash(cfg), "done", run_dir)
    print(f"checkpoint: {path}")
    return 0


def cmd_eval(args) -> int:
    cfg: EvalConfig = _load_job(EvalConfig, args)
    cfg.validate()
    seed = args.seed if args.seed is not None else 0
    if not os.path.isdir(args.run):
        print(f"run directory not found: {args.run}", file=sys.stderr)
        return 1
    if args.force:
        tag = config_hash(cfg)[:12]
        cached = os.path.join(args.run, f"eval_{cfg.mode}_s{seed}_{tag}.json")
        if os.path.exists(cached):
            os.remove(cached)
    root = out_root()
    run_id = f"eval-{config_hash(cfg)[:8]}-{os.path.basename(os.path.normpath(args.run))}-s{seed}"
    registry_append(root, run_id, config_hash(cfg), "running", args.run)
    try:
        res = probe_cached(args.run, cfg, seed)
    except Exception as e:
        registry_append(root, run_id, config_hash(cfg), "failed", args.run)
        print(f"evaluation failed: {e}", file=sys.stderr)
        return 1
    registry_append(root, run_id, config_hash(cfg), "done", args.run)
    print(json.dumps(res, sort_keys=True))
    return 0


def cmd_matrix(args) -> int:
    job: MatrixJob = _load_job(MatrixJob, args)
    if args.seed is not None:
        job = dataclasses.replace(job, base=dataclasses.replace(job.base, seed=args.seed))
    root = out_root()
    out_dir = args.out or os.path.join(root, "matrix", config_hash(job)[:10])
    run_id = f"matrix-{config_hash(job)[:10]}"
    registry_append(root, run_id, config_hash(job), "running", out_dir)
    try:
        res = task_transfer_matrix(job.kinds, job.base, job.transfer, out_dir)
    except Exception as e:
        registry_append(root, run_id, config_hash(job), "failed", out_dir)
        print(f"matrix failed: {e}", file=sys.stderr)
        return 1
    registry_append(root, run_id, config_hash(job), "done", out_dir)
    print(f"matrix: {res['csv']}")
    return 0


def cmd_sweep(args) -> int:
    job: SweepJob = _load_job(SweepJob, args)
    if args.seed is not None:
        job = dataclasses.replace(job, base=dataclasses.replace(job.base, seed=args.seed))
    root = out_root()
    out_dir = args.out or os.path.join(root, "sweep", config_hash(job)[:10])
    run_id = f"sweep-{config_hash(job)[:10]}"
    registry_append(root, run_id, config_hash(job), "running", out_dir)
    try:
        rows = lambda_sweep(job.values, job.base, job.eval, out_dir)
    except Exception as e:
        registry_append(root, run_id, config_hash(job), "failed", out_dir)
        print(f"sweep failed: {e}", file=sys.stderr)
        return 1
    registry_append(root, run_id, config_hash(job), "done", out_dir)
    for r in rows:
        print(f"lam={r['lam']:g} accuracy={r['accuracy']:.4f}")
    return 0


def cmd_suite(args) -> int:
    cfg: SuiteConfig = _load_job(SuiteConfig, args)
    cfg.validate()
    root = out_root()
    out_dir = args.out or os.path.join(root, "suite", config_hash(cfg)[:10])
    run_id = f"suite-{config_hash(cfg)[:10]}"
    registry_append(root, run_id, config_hash(cfg), "running", out_dir)
    try:
        report = comparison_suite(cfg, out_dir)
    except Exception as e:
        registry_append(root, run_id, config_hash(cfg), "failed", out_dir)
        print(f"suite failed: {e}", file=sys.stderr)
        return 1
    registry_append(root, run_id, config_hash(cfg), "done", out_dir)
    for row in report.rows:
        print(f"{row.name:48s} mean={row.mean:.4f} std={row.std:.4f}")
    print(f"report: {os.path.join(out_dir, 'comparison.csv')}")
    return 0


def cmd_plot(args) -> int:
    from . import plotting

    path = args.path
    out_dir = args.out or (path if os.path.isdir(path) else os.path.dirname(path) or ".")
    os.makedirs(out_dir, exist_ok=True)
    try:
        if os.path.isdir(path):
            img = plotting.plot_training_curves(path, os.path.join(out_dir, "curves.png"))
        elif path.endswith("transfer_matrix.csv"):
            import numpy as np
            with open(path) as f:
                header = f.readline().rstrip("\n").split(",")[1:]
                rows, labels = [], []
                for line in f:
                    parts = line.rstrip("\n").split(",")
                    labels.append(parts[0])
                    rows.append([float(v) for v in parts[1:]])
            img = plotting.plot_heatmap(
                np.array(rows), labels, header,
                os.path.join(out_dir, "transfer_matrix.png"),
                title="task transfer (row: pretrain, column: re-trained task)",
            )
        elif path.endswith("lambda_sweep.csv"):
            rows = []
            with open(path) as f:
                f.readline()
                for line in f:
                    lam, acc, _ = line.rstrip("\n").split(",", 2)
                    rows.append({"lam": float(lam), "accuracy": float(acc)})
            img = plotting.plot_sweep(rows, os.path.join(out_dir, "lambda_sweep.png"))
        elif path.endswith(".csv"):
            img = plotting.plot_comparison(path, os.path.join(out_dir, "comparison.png"))
        else:
            print(f"don't know how to plot {path}", file=sys.stderr)
            return 1
    except (FileNotFoundError, ValueError) as e:
        print(f"plot failed: {e}", file=sys.stderr)
        return 1
    print(f"wrote {img}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tempossl",
        description="temporal-transform contrastive pretraining and evaluation",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="YAML config file")
            sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                            help="dotted config override (repeatable)")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--force", action="store_true", help="redo completed work")

    sp = sub.add_parser("generate", help="write a synthetic dataset manifest")
    common(sp)
    sp.set_defaults(fn=cmd_generate)

    sp = sub.add_parser("pretrain", help="run self-supervised pretraining")
    common(sp)
    sp.add_argument("--resume", action="store_true", help="continue from the run's checkpoint")
    sp.set_defaults(fn=cmd_pretrain)

    sp = sub.add_parser("eval", help="evaluate a pretraining run")
    common(sp)
    sp.add_argument("--run", required=True, help="pretraining run directory")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("matrix", help="task-transfer matrix")
    common(sp)
    sp.set_defaults(fn=cmd_matrix)

    sp = sub.add_parser("sweep", help="task-weight sweep")
    common(sp)
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("suite", help="baseline / augmentation / joint comparison suite")
    common(sp)
    sp.set_defaults(fn=cmd_suite)

    sp = sub.add_parser("plot", help="render plots for a run or report")
    sp.add_argument("path", help="run directory or report CSV")
    sp.add_argument("--out", default=None, help="image output directory")
    sp.set_defaults(fn=cmd_plot)

    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"missing input: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
