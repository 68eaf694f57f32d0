"""Downstream evaluation and the ablation harnesses.

Protocols on top of a pretraining run directory:

* ``linear_probe`` — freeze the backbone, train a linear classifier on
  cached clip features, score with multi-clip averaging.
* ``finetune_full`` — train backbone + classifier end to end with milestone
  learning-rate decay.
* ``eval_multiclip`` — uniformly spaced clips, averaged softmax.
* ``task_transfer_matrix`` — pretrain on one pretext task, re-train each
  task's prediction on top, report the cross accuracies.
* ``lambda_sweep`` — accuracy as a function of the task-loss weight.
* ``comparison_suite`` — baseline vs augmentation-only vs joint training
  vs task-only (and multi-task pairs), multi-seed, one table.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from . import transforms as tfm
from .config import config_hash, load_yaml
from .encoder import VideoEncoder, build_task_head, clips_to_tensor, init_parameters
from .objective import sgd_momentum_step
from .rng import named_stream
from .training import (
    CHECKPOINT_NAME,
    CONFIG_NAME,
    ExperimentConfig,
    build_dataset,
    load_checkpoint,
    pretrain,
    split_indices,
)
from .videodata import (
    Clip,
    ClipSampleConfig,
    Video,
    VideoDataset,
    clip_frame_indices,
    uniform_clip_starts,
)


@dataclass
class EvalConfig:
    mode: str = "linear_probe"  # "linear_probe" | "full_finetune"
    epochs: int = 60
    base_lr: float = 1.0
    milestones: tuple[int, ...] = (30, 40, 50)
    decay: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 256
    train_clips: int = 4   # clips cached per training video (probe mode)
    test_clips: int = 10

    def validate(self) -> None:
        if self.mode not in ("linear_probe", "full_finetune"):
            raise ValueError(f"mode must be 'linear_probe' or 'full_finetune', got {self.mode!r}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if list(self.milestones) != sorted(set(self.milestones)):
            raise ValueError(f"milestones must be strictly increasing, got {self.milestones}")
        if self.milestones and self.milestones[-1] >= self.epochs:
            raise ValueError(
                f"milestones must lie inside the {self.epochs}-epoch schedule, got {self.milestones}"
            )
        if not 0 < self.decay <= 1:
            raise ValueError(f"decay must be in (0, 1], got {self.decay}")
        if self.test_clips < 1 or self.train_clips < 1:
            raise ValueError("train_clips and test_clips must be >= 1")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


def finetune_defaults() -> EvalConfig:
    return EvalConfig(
        mode="full_finetune", epochs=20, base_lr=0.02, milestones=(5, 10, 15),
        decay=0.1, weight_decay=1e-4, batch_size=32,
    )


def milestone_lr(epoch: int, cfg: EvalConfig) -> float:
    """Step-decay schedule: base * decay^(#milestones passed)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    drops = sum(1 for m in cfg.milestones if epoch >= m)
    return cfg.base_lr * cfg.decay ** drops


# ---------------------------------------------------------------------------
# encoder plumbing


def load_run(run_dir: str) -> tuple[ExperimentConfig, dict]:
    cfg_path = os.path.join(run_dir, CONFIG_NAME)
    ck_path = os.path.join(run_dir, CHECKPOINT_NAME)
    if not os.path.exists(cfg_path):
        raise FileNotFoundError(f"no {CONFIG_NAME} in {run_dir}")
    cfg = load_yaml(ExperimentConfig, cfg_path)
    ck = load_checkpoint(ck_path)
    return cfg, ck


def encoder_from_checkpoint(cfg: ExperimentConfig, ck: dict) -> VideoEncoder:
    enc = VideoEncoder(cfg.encoder)
    with torch.no_grad():
        for name, p in enc.named_parameters():
            key = f"encoder.{name}"
            if key not in ck["params"]:
                raise KeyError(f"checkpoint is missing parameter {key}")
            p.copy_(torch.from_numpy(ck["params"][key]))
    return enc


def encoder_param_bytes(enc: VideoEncoder) -> bytes:
    return b"".join(p.detach().numpy().tobytes() for _, p in sorted(enc.named_parameters()))


@torch.no_grad()
def _encode_batched(enc: VideoEncoder, clips: np.ndarray, batch: int = 256) -> torch.Tensor:
    outs = []
    for i in range(0, clips.shape[0], batch):
        outs.append(enc(clips_to_tensor(clips[i:i + batch])))
    return torch.cat(outs, dim=0)


def _video_clip_stack(
    dataset: VideoDataset, vid: int, clip_cfg: ClipSampleConfig, num_clips: int
) -> tuple[np.ndarray, np.ndarray]:
    """Uniformly spaced clips of one video: (clips (k,T,H,W,3), counts (k,)).

    Counts carry how many of the `num_clips` requested positions collapsed
    onto each unique start, so averages can stay multiplicity-faithful.
    """
    n = dataset.num_frames(vid)
    hi = uniform_clip_starts(n, clip_cfg, 1)  # validates length; cheap
    starts = np.round(np.linspace(0, n - clip_cfg.span, num_clips)).astype(np.int64)
    uniq, counts = np.unique(starts, return_counts=True)
    clips = np.stack([dataset.get_frames(vid, clip_frame_indices(int(s), clip_cfg)) for s in uniq])
    return clips, counts


def eval_multiclip(
    logits_fn: Callable[[torch.Tensor], torch.Tensor],
    clips: np.ndarray,
    counts: Optional[np.ndarray] = None,
) -> tuple[int, np.ndarray]:
    """Average the softmax of `logits_fn` over clips; return (pred, probs).

    `counts` weighs duplicate clip positions.  A single clip bypasses the
    averaging entirely, so one-span videos equal single-clip inference
    exactly.
    """
    if clips.ndim != 5:
        raise ValueError(f"expected clips (k, T, H, W, 3), got {clips.shape}")
    k = clips.shape[0]
    if counts is None:
        counts = np.ones(k, dtype=np.int64)
    if len(counts) != k:
        raise ValueError(f"counts length {len(counts)} != clips {k}")
    with torch.no_grad():
        logits = logits_fn(clips_to_tensor(clips)).double()
        probs = torch.softmax(logits, dim=1).numpy()
    if k == 1:
        avg = probs[0]
    else:
        avg = (probs * counts[:, None]).sum(0) / counts.sum()
    return int(avg.argmax()), avg


# ---------------------------------------------------------------------------
# linear probe


def _cached_features(
    enc: VideoEncoder,
    dataset: VideoDataset,
    vids: np.ndarray,
    clip_cfg: ClipSampleConfig,
    num_clips: int,
) -> tuple[torch.Tensor, np.ndarray, np.ndarray, np.ndarray]:
    """Features for uniformly spaced clips of many videos.

    Returns (features, row_video_pos, row_counts, labels_per_video).
    """
    all_clips, row_vid, row_cnt, labels = [], [], [], []
    for pos, vid in enumerate(vids):
        clips, counts = _video_clip_stack(dataset, int(vid), clip_cfg, num_clips)
        all_clips.append(clips)
        row_vid.extend([pos] * clips.shape[0])
        row_cnt.extend(counts.tolist())
        lab = dataset.class_label(int(vid))
        if lab is None:
            raise ValueError(f"video {vid} has no class label; cannot evaluate")
        labels.append(int(lab))
    feats = _encode_batched(enc, np.concatenate(all_clips, axis=0))
    return feats, np.array(row_vid), np.array(row_cnt), np.array(labels)


def _train_linear_head(
    feats: torch.Tensor,
    labels: torch.Tensor,
    num_classes: int,
    cfg: EvalConfig,
    rng: np.random.Generator,
) -> torch.nn.Linear:
    head = torch.nn.Linear(feats.shape[1], num_classes)
    with torch.no_grad():
        w = rng.normal(0, 0.01, size=(num_classes, feats.shape[1]))
        head.weight.copy_(torch.from_numpy(w).float())
        head.bias.zero_()
    params = dict(head.named_parameters())
    vel = {k: torch.zeros_like(p) for k, p in params.items()}
    n = feats.shape[0]
    for epoch in range(cfg.epochs):
        lr = milestone_lr(epoch, cfg)
        order = rng.permutation(n)
        for s in range(0, n, cfg.batch_size):
            idx = torch.from_numpy(order[s:s + cfg.batch_size].copy())
            loss = F.cross_entropy(head(feats[idx]), labels[idx])
            head.zero_grad(set_to_none=True)
            loss.backward()
            grads = {k: p.grad for k, p in params.items()}
            sgd_momentum_step(params, grads, vel, lr, cfg.momentum, cfg.weight_decay)
    return head


def linear_probe(run_dir: str, eval_cfg: EvalConfig, seed: int = 0) -> dict:
    """Frozen-backbone linear classification on a pretraining run.

    The backbone never enters the optimizer and all features are computed
    under no-grad, so its parameters are bitwise those of the checkpoint.
    """
    eval_cfg.validate()
    if eval_cfg.mode != "linear_probe":
        raise ValueError(f"linear_probe called with mode {eval_cfg.mode!r}")
    cfg, ck = load_run(run_dir)
    enc = encoder_from_checkpoint(cfg, ck)
    before = encoder_param_bytes(enc)
    # each clip is read exactly once here, so memoizing full videos is waste
    dataset = build_dataset(cfg, cache_videos=False)
    train_idx, test_idx = split_indices(len(dataset), cfg.split.test_every)
    if len(test_idx) == 0:
        raise ValueError("config has no held-out split (split.test_every=0); nothing to score")
    rng = named_stream(seed, "eval")

    tr_feats, tr_vid, _, tr_labels = _cached_features(
        enc, dataset, train_idx, cfg.clip, eval_cfg.train_clips
    )
    num_classes = int(max(tr_labels)) + 1
    row_labels = torch.from_numpy(tr_labels[tr_vid]).long()
    head = _train_linear_head(tr_feats, row_labels, num_classes, eval_cfg, rng)

    te_feats, te_vid, te_cnt, te_labels = _cached_features(
        enc, dataset, test_idx, cfg.clip, eval_cfg.test_clips
    )
    with torch.no_grad():
        probs = torch.softmax(head(te_feats).double(), dim=1).numpy()
    correct = 0
    for pos in range(len(test_idx)):
        rows = te_vid == pos
        cnt = te_cnt[rows]
        avg = (probs[rows] * cnt[:, None]).sum(0) / cnt.sum()
        correct += int(int(avg.argmax()) == int(te_labels[pos]))
    acc = correct / len(test_idx)

    if encoder_param_bytes(enc) != before:
        raise AssertionError("linear probe modified the backbone")
    return {
        "mode": "linear_probe",
        "accuracy": acc,
        "num_test": int(len(test_idx)),
        "num_classes": num_classes,
        "seed": seed,
    }


# ---------------------------------------------------------------------------
# full finetune


def finetune_full(run_dir: str, eval_cfg: EvalConfig, seed: int = 0) -> dict:
    """End-to-end finetuning of the pretrained backbone plus a classifier."""
    eval_cfg.validate()
    if eval_cfg.mode != "full_finetune":
        raise ValueError(f"finetune_full called with mode {eval_cfg.mode!r}")
    cfg, ck = load_run(run_dir)
    enc = encoder_from_checkpoint(cfg, ck)
    dataset = build_dataset(cfg)
    train_idx, test_idx = split_indices(len(dataset), cfg.split.test_every)
    if len(test_idx) == 0:
        raise ValueError("config has no held-out split (split.test_every=0); nothing to score")
    rng = named_stream(seed, "eval")

    labels = np.array([dataset.class_label(int(v)) for v in train_idx])
    if any(l is None for l in labels):
        raise ValueError("finetuning requires class labels on every training video")
    num_classes = int(labels.max()) + 1

    head = torch.nn.Linear(enc.feature_dim, num_classes)
    with torch.no_grad():
        head.weight.copy_(torch.from_numpy(
            rng.normal(0, 0.01, size=(num_classes, enc.feature_dim))).float())
        head.bias.zero_()
    params = {f"encoder.{k}": v for k, v in enc.named_parameters()}
    params.update({f"head.{k}": v for k, v in head.named_parameters()})
    vel = {k: torch.zeros_like(p) for k, p in params.items()}

    for epoch in range(eval_cfg.epochs):
        lr = milestone_lr(epoch, eval_cfg)
        order = rng.permutation(train_idx)
        for s in range(0, len(order), eval_cfg.batch_size):
            chunk = order[s:s + eval_cfg.batch_size]
            clips = []
            for vid in chunk:
                n = dataset.num_frames(int(vid))
                start = int(rng.integers(0, n - cfg.clip.span + 1))
                clips.append(dataset.get_frames(int(vid), clip_frame_indices(start, cfg.clip)))
            x = clips_to_tensor(np.stack(clips))
            y = torch.from_numpy(
                np.array([dataset.class_label(int(v)) for v in chunk])
            ).long()
            loss = F.cross_entropy(head(enc(x)), y)
            enc.zero_grad(set_to_none=True)
            head.zero_grad(set_to_none=True)
            loss.backward()
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            sgd_momentum_step(params, grads, vel, lr, eval_cfg.momentum, eval_cfg.weight_decay)

    def logits_fn(x: torch.Tensor) -> torch.Tensor:
        return head(enc(x))

    correct = 0
    for vid in test_idx:
        clips, counts = _video_clip_stack(dataset, int(vid), cfg.clip, eval_cfg.test_clips)
        pred, _ = eval_multiclip(logits_fn, clips, counts)
        correct += int(pred == int(dataset.class_label(int(vid))))
    return {
        "mode": "full_finetune",
        "accuracy": correct / len(test_idx),
        "num_test": int(len(test_idx)),
        "num_classes": num_classes,
        "seed": seed,
    }


def evaluate(run_dir: str, eval_cfg: EvalConfig, seed: int = 0) -> dict:
    if eval_cfg.mode == "linear_probe":
        return linear_probe(run_dir, eval_cfg, seed)
    return finetune_full(run_dir, eval_cfg, seed)


# ---------------------------------------------------------------------------
# run orchestration helpers (shared by the harnesses and the CLI)


def run_pretrain_cached(cfg: ExperimentConfig, out_dir: str) -> str:
    """Pretrain unless `out_dir` already holds a finished run of this config.

    Returns the run directory either way.
    """
    ck_path = os.path.join(out_dir, CHECKPOINT_NAME)
    if os.path.exists(ck_path):
        try:
            ck = load_checkpoint(ck_path)
            if (
                ck["config_hash"] == config_hash(cfg)
                and ck["epochs_done"] >= cfg.schedule.total_epochs
            ):
                return out_dir
        except Exception:
            pass  # unreadable/partial checkpoint: redo the run
    pretrain(cfg, out_dir)
    return out_dir


def probe_cached(run_dir: str, eval_cfg: EvalConfig, seed: int) -> dict:
    """Evaluate a run, reusing a stored result for the same eval config."""
    tag = config_hash(eval_cfg)[:12]
    path = os.path.join(run_dir, f"eval_{eval_cfg.mode}_s{seed}_{tag}.json")
    if os.path.exists(path):
        with open(path) as f:
            return json.load(f)
    res = evaluate(run_dir, eval_cfg, seed)
    with open(path, "w") as f:
        json.dump(res, f, sort_keys=True)
    return res


# ---------------------------------------------------------------------------
# comparison suite


@dataclass
class SuiteConfig:
    base: ExperimentConfig = field(default_factory=ExperimentConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    kinds: tuple[str, ...] = tfm.DEFAULT_KINDS
    seeds: tuple[int, ...] = (0, 1, 2)
    with_baseline: bool = True
    with_augmentation_only: bool = True
    with_joint: bool = True
    with_task_only: bool = False
    with_dual: bool = False       # joint + augmentation-only for every pair
    with_triple: bool = False
    with_quadruple: bool = False

    def validate(self) -> None:
        self.base.validate()
        self.eval.validate()
        tfm.validate_kinds(self.kinds)
        if not self.seeds:
            raise ValueError("need at least one seed")


@dataclass
class SuiteRow:
    name: str
    group: str                  # baseline | augmentation_only | joint | task_only
    kinds: tuple[str, ...]
    accuracies: tuple[float, ...]
    run_dirs: tuple[str, ...]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))


@dataclass
class ComparisonReport:
    rows: list[SuiteRow]

    def row(self, name: str) -> SuiteRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(f"no suite row named {name!r}; have {[r.name for r in self.rows]}")

    def group(self, group: str) -> list[SuiteRow]:
        return [r for r in self.rows if r.group == group]

    def to_csv(self, path: str) -> None:
        with open(path, "w") as f:
            f.write("name,group,kinds,mean,std,accuracies,run_dirs\n")
            for r in self.rows:
                accs = " ".join(repr(a) for a in r.accuracies)
                dirs = " ".join(r.run_dirs)
                f.write(f"{r.name},{r.group},{'+'.join(r.kinds)},{r.mean!r},{r.std!r},{accs},{dirs}\n")


def _mode_config(base: ExperimentConfig, kinds: tuple[str, ...], group: str, seed: int) -> ExperimentConfig:
    obj = base.objective
    if group == "baseline":
        kinds = ()
        obj = dataclasses.replace(obj, contrast_enabled=True, task_enabled=False)
    elif group == "augmentation_only":
        obj = dataclasses.replace(obj, contrast_enabled=True, task_enabled=False)
    elif group == "joint":
        obj = dataclasses.replace(obj, contrast_enabled=True, task_enabled=True)
    elif group == "task_only":
        obj = dataclasses.replace(obj, contrast_enabled=False, task_enabled=True)
    else:
        raise ValueError(f"unknown suite group {group!r}")
    return dataclasses.replace(base, transform_kinds=kinds, objective=obj, seed=seed)


def suite_row_name(group: str, kinds: tuple[str, ...]) -> str:
    return f"{group}[{'+'.join(kinds) if kinds else 'none'}]"


def comparison_suite(cfg: SuiteConfig, out_root: str, log: Callable[[str], None] = print) -> ComparisonReport:
    """Run (or reuse) every requested configuration x seed; build the table."""
    cfg.validate()
    os.makedirs(out_root, exist_ok=True)
    jobs: list[tuple[str, tuple[str, ...]]] = []
    if cfg.with_baseline:
        jobs.append(("baseline", ()))
    for k in cfg.kinds:
        if cfg.with_augmentation_only:
            jobs.append(("augmentation_only", (k,)))
        if cfg.with_joint:
            jobs.append(("joint", (k,)))
        if cfg.with_task_only:
            jobs.append(("task_only", (k,)))
    sizes = []
    if cfg.with_dual:
        sizes.append(2)
    if cfg.with_triple:
        sizes.append(3)
    if cfg.with_quadruple:
        sizes.append(4)
    for size in sizes:
        for combo in itertools.combinations(cfg.kinds, size):
            jobs.append(("augmentation_only", combo))
            jobs.append(("joint", combo))

    rows = []
    for group, kinds in jobs:
        accs, dirs = [], []
        for seed in cfg.seeds:
            run_cfg = _mode_config(cfg.base, kinds, group, seed)
            run_dir = os.path.join(
                out_root, f"{group}-{'+'.join(kinds) if kinds else 'none'}-s{seed}"
            )
            log(f"[suite] {os.path.basename(run_dir)}")
            run_pretrain_cached(run_cfg, run_dir)
            res = probe_cached(run_dir, cfg.eval, seed)
            accs.append(res["accuracy"])
            dirs.append(run_dir)
        rows.append(SuiteRow(
            name=suite_row_name(group, kinds), group=group, kinds=kinds,
            accuracies=tuple(accs), run_dirs=tuple(dirs),
        ))
    report = ComparisonReport(rows)
    report.to_csv(os.path.join(out_root, "comparison.csv"))
    return report


# ---------------------------------------------------------------------------
# lambda sweep


def lambda_sweep(
    values: Sequence[float],
    base: ExperimentConfig,
    eval_cfg: EvalConfig,
    out_root: str,
    log: Callable[[str], None] = print,
) -> list[dict]:
    """Probe accuracy per task weight; checks the zero-weight degeneracy.

    The lam=0 row must match an augmentation-only run exactly (same seed,
    same transforms): with the task path silenced the two trainings are the
    same computation.
    """
    if not values:
        raise ValueError("need at least one lambda value")
    if any(v < 0 for v in values):
        raise ValueError(f"lambda values must be >= 0, got {list(values)}")
    os.makedirs(out_root, exist_ok=True)
    rows = []
    for lam in values:
        run_cfg = dataclasses.replace(
            base,
            objective=dataclasses.replace(
                base.objective, lam=float(lam), contrast_enabled=True, task_enabled=True
            ),
        )
        run_dir = os.path.join(out_root, f"lam{lam:g}")
        log(f"[sweep] lam={lam:g}")
        run_pretrain_cached(run_cfg, run_dir)
        res = probe_cached(run_dir, eval_cfg, base.seed)
        rows.append({"lam": float(lam), "accuracy": res["accuracy"], "run_dir": run_dir})

    if any(v == 0 for v in values):
        aug_cfg = dataclasses.replace(
            base,
            objective=dataclasses.replace(
                base.objective, contrast_enabled=True, task_enabled=False
            ),
        )
        aug_dir = os.path.join(out_root, "lam0-reference")
        log("[sweep] lam=0 reference (augmentation-only)")
        run_pretrain_cached(aug_cfg, aug_dir)
        ref = probe_cached(aug_dir, eval_cfg, base.seed)
        lam0 = next(r for r in rows if r["lam"] == 0)
        if lam0["accuracy"] != ref["accuracy"]:
            raise AssertionError(
                f"lam=0 accuracy {lam0['accuracy']} differs from the "
                f"augmentation-only reference {ref['accuracy']}; the silent-task "
                f"path is broken"
            )
        lam0["reference_run_dir"] = aug_dir

    with open(os.path.join(out_root, "lambda_sweep.csv"), "w") as f:
        f.write("lam,accuracy,run_dir\n")
        for r in rows:
            f.write(f"{r['lam']!r},{r['accuracy']!r},{r['run_dir']}\n")
    return rows


# ---------------------------------------------------------------------------
# task-transfer matrix


def _task_view_batch(
    dataset: VideoDataset,
    chunk: np.ndarray,
    kind: str,
    exp_cfg: ExperimentConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """One batch of transformed views + task labels for videos in `chunk`."""
    arrs, labels = [], []
    for vid in chunk:
        n = dataset.num_frames(int(vid))
        start = int(rng.integers(0, n - exp_cfg.clip.span + 1))
        base = dataset.get_frames(int(vid), clip_frame_indices(start, exp_cfg.clip))
        video = None
        if kind in (tfm.SPEED, tfm.CLIP_ORDER):
            video = Video(frames=dataset.get_frames(int(vid), range(n)), id=int(vid))
        out = tfm.apply_transform(
            kind, video, Clip(frames=base, video_id=int(vid), start=start),
            exp_cfg.tf, rng,
        )
        arrs.extend(c.frames for c in out.clips)
        labels.append(out.task_label)
    return np.stack(arrs), np.array(labels)


def _transfer_accuracy(
    row_dir: str,
    col_kind: str,
    transfer_cfg: EvalConfig,
    seed: int,
) -> float:
    """Retrain `col_kind` prediction on a row-pretrained backbone; score it."""
    cfg, ck = load_run(row_dir)
    enc = encoder_from_checkpoint(cfg, ck)
    head = build_task_head(col_kind, enc.feature_dim, cfg.task_head, cfg.tf)
    rng = named_stream(seed, "eval")
    init_parameters(head, rng)
    dataset = build_dataset(cfg)
    train_idx, test_idx = split_indices(len(dataset), cfg.split.test_every)
    if len(test_idx) == 0:
        raise ValueError("config has no held-out split; cannot score transfer")

    params = {f"encoder.{k}": v for k, v in enc.named_parameters()}
    params.update({f"head.{k}": v for k, v in head.named_parameters()})
    vel = {k: torch.zeros_like(p) for k, p in params.items()}
    n_branch = tfm.num_branches(col_kind)

    for epoch in range(transfer_cfg.epochs):
        lr = milestone_lr(epoch, transfer_cfg)
        order = rng.permutation(train_idx)
        for s in range(0, len(order), transfer_cfg.batch_size):
            clips, labels = _task_view_batch(dataset, order[s:s + transfer_cfg.batch_size],
                                             col_kind, cfg, rng)
            feats = enc(clips_to_tensor(clips))
            if n_branch > 1:
                feats = feats.reshape(-1, n_branch, feats.shape[-1])
            loss = F.cross_entropy(head(feats), torch.from_numpy(labels).long())
            enc.zero_grad(set_to_none=True)
            head.zero_grad(set_to_none=True)
            loss.backward()
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            sgd_momentum_step(params, grads, vel, lr, transfer_cfg.momentum,
                              transfer_cfg.weight_decay)

    correct = 0
    with torch.no_grad():
        for s in range(0, len(test_idx), transfer_cfg.batch_size):
            clips, labels = _task_view_batch(dataset, test_idx[s:s + transfer_cfg.batch_size],
                                             col_kind, cfg, rng)
            feats = enc(clips_to_tensor(clips))
            if n_branch > 1:
                feats = feats.reshape(-1, n_branch, feats.shape[-1])
            correct += int((head(feats).argmax(1).numpy() == labels).sum())
    return correct / len(test_idx)


def task_transfer_matrix(
    kinds: Sequence[str],
    base: ExperimentConfig,
    transfer_cfg: EvalConfig,
    out_root: str,
    log: Callable[[str], None] = print,
) -> dict:
    """Pretrain on each row task; re-train each column task's prediction.

    Cell (row, col) is column-task accuracy on held-out videos after
    finetuning the row-pretrained backbone (plus a fresh column head) on
    the column task alone.  Writes the matrix CSV and a heatmap image.
    """
    kinds = tfm.validate_kinds(kinds)
    if len(kinds) < 2:
        raise ValueError("transfer matrix needs at least 2 tasks")
    transfer_cfg.validate()
    os.makedirs(out_root, exist_ok=True)

    row_dirs = []
    for row in kinds:
        row_cfg = dataclasses.replace(
            base,
            transform_kinds=(row,),
            objective=dataclasses.replace(base.objective, contrast_enabled=True, task_enabled=True),
        )
        row_dir = os.path.join(out_root, f"pretrain-{row}")
        log(f"[matrix] pretraining on {row}")
        run_pretrain_cached(row_cfg, row_dir)
        row_dirs.append(row_dir)

    matrix = np.zeros((len(kinds), len(kinds)))
    for ri, row in enumerate(kinds):
        for ci, col in enumerate(kinds):
            log(f"[matrix] transfer {row} -> {col}")
            matrix[ri, ci] = _transfer_accuracy(row_dirs[ri], col, transfer_cfg, base.seed)

    csv_path = os.path.join(out_root, "transfer_matrix.csv")
    with open(csv_path, "w") as f:
        f.write("pretrain\\finetune," + ",".join(kinds) + "\n")
        for ri, row in enumerate(kinds):
            f.write(row + "," + ",".join(repr(v) for v in matrix[ri]) + "\n")
    from .plotting import plot_heatmap
    png_path = os.path.join(out_root, "transfer_matrix.png")
    plot_heatmap(matrix, list(kinds), list(kinds), png_path,
                 title="task transfer (row: pretrain, column: re-trained task)")
    return {"kinds": list(kinds), "matrix": matrix, "row_dirs": row_dirs,
            "csv": csv_path, "png": png_path}
