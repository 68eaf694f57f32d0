"""The pretraining loop: data -> transforms -> encoder/heads -> losses -> SGD.

One step processes a batch of videos: sample a base clip per video, apply
the configured transform set, encode the original and every transformed
view, project all of them, score the contrastive loss against the negative
store, add the (lambda-weighted) transform-prediction loss, and take one
classical SGD-with-momentum step.  The negative store is then refreshed
(bank slot update for the instance-discrimination variant; key push plus
momentum-encoder update for the queue variant).

Determinism contract: two runs from the same config and seed produce
byte-identical metrics (excluding wall-time fields) and bit-identical
checkpoints.  All randomness flows through named numpy streams; compute
runs single-threaded through the tensor backend.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from . import transforms as tf
from .config import config_hash, dump_yaml, load_yaml, to_dict
from .contrastive import (
    ContrastiveConfig,
    MemoryBank,
    MomentumQueue,
    momentum_update,
    nce_pair_loss,
)
from .encoder import (
    EncoderConfig,
    ProjectionConfig,
    TacoModel,
    TaskHeadConfig,
    clips_to_tensor,
    init_taco_model,
)
from .objective import ObjectiveConfig, ScheduleConfig, lr_at, overall_loss, sgd_momentum_step, task_loss
from .rng import capture_state, named_stream, restore_state
from .videodata import (
    ClipSampleConfig,
    SyntheticDataConfig,
    VideoDataset,
    clip_frame_indices,
    is_static,
    load_manifest,
    make_synthetic_specs,
    sample_clip_start,
)

CHECKPOINT_VERSION = 1
CHECKPOINT_NAME = "checkpoint.npz"
METRICS_NAME = "metrics.jsonl"
EPOCHS_NAME = "epochs.csv"
CONFIG_NAME = "config.yaml"

torch.set_num_threads(1)  # keeps float reduction order reproducible


@dataclass
class SplitConfig:
    """Hold out every k-th video for downstream evaluation (0 = no holdout)."""

    test_every: int = 5

    def validate(self) -> None:
        if self.test_every < 0 or self.test_every == 1:
            raise ValueError(
                f"test_every must be 0 (no holdout) or >= 2, got {self.test_every}"
            )


def split_indices(n: int, test_every: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic round-robin train/test split over video indices."""
    idx = np.arange(n)
    if test_every == 0:
        return idx, np.empty(0, dtype=np.int64)
    test = idx[idx % test_every == test_every - 1]
    train = idx[idx % test_every != test_every - 1]
    return train, test


@dataclass
class ExperimentConfig:
    data: SyntheticDataConfig = field(default_factory=SyntheticDataConfig)
    data_seed: int = 0
    manifest: Optional[str] = None  # overrides `data` when set
    split: SplitConfig = field(default_factory=SplitConfig)
    clip: ClipSampleConfig = field(default_factory=ClipSampleConfig)
    transform_kinds: tuple[str, ...] = tf.DEFAULT_KINDS  # empty = plain CSL baseline
    tf: tf.TransformConfigs = field(default_factory=tf.TransformConfigs)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    task_head: TaskHeadConfig = field(default_factory=TaskHeadConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    batch_size: int = 16
    clips_per_video: int = 1
    seed: int = 0
    checkpoint_every: int = 0  # epochs between mid-run checkpoints (0 = end only)

    def validate(self) -> None:
        self.data.validate()
        self.split.validate()
        self.clip.validate()
        if self.transform_kinds:
            tf.validate_kinds(self.transform_kinds)
        self.tf.validate()
        self.encoder.validate()
        self.projection.validate()
        self.task_head.validate()
        self.contrastive.validate()
        self.objective.validate()
        self.schedule.validate()
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.clips_per_video < 1:
            raise ValueError(f"clips_per_video must be >= 1, got {self.clips_per_video}")
        if self.checkpoint_every < 0:
            raise ValueError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        if not self.transform_kinds and not self.objective.contrast_enabled:
            raise ValueError("task-only training requires at least one transform kind")


def build_dataset(cfg: ExperimentConfig, cache_videos: bool = True) -> VideoDataset:
    """Materialize the dataset a config names.

    ``cache_videos=False`` suits single-pass consumers (evaluation); the
    training loop revisits every video each epoch and wants the memo.
    """
    if cfg.manifest:
        return load_manifest(cfg.manifest, cache_videos=cache_videos)
    specs = make_synthetic_specs(cfg.data, named_stream(cfg.data_seed, "data"))
    return VideoDataset.from_specs(specs, cache_videos=cache_videos)


# ---------------------------------------------------------------------------
# per-video batch assembly


def _draw_video_views(
    dataset: VideoDataset,
    vid: int,
    cfg: ExperimentConfig,
    sampling_rng: np.random.Generator,
    transform_rng: np.random.Generator,
    need_key_clip: bool,
) -> dict:
    """Sample the base clip and every transformed view for one video.

    Draw order is fixed (base start, optional key start, then transforms in
    configured order) so identical seeds replay identical batches.
    """
    n_frames = dataset.num_frames(vid)
    base_start = sample_clip_start(n_frames, cfg.clip, sampling_rng)
    out: dict = {"id": vid, "base_start": base_start}
    base_idx = clip_frame_indices(base_start, cfg.clip)
    key_idx = None
    if need_key_clip:
        key_start = sample_clip_start(n_frames, cfg.clip, sampling_rng)
        key_idx = clip_frame_indices(key_start, cfg.clip)

    views: dict[str, dict] = {}
    plans: dict[str, object] = {}
    for kind in cfg.transform_kinds:
        if kind == tf.ROTATION:
            angle = int(transform_rng.integers(4))
            jit = transform_rng.uniform(
                -cfg.tf.rotation.jitter_deg, cfg.tf.rotation.jitter_deg, size=cfg.clip.num_frames
            )
            plans[kind] = (angle, jit)
        elif kind == tf.REVERSE:
            plans[kind] = int(transform_rng.integers(2))
        elif kind == tf.SHUFFLE:
            t = cfg.clip.num_frames
            if t < 4 or t % 2:
                raise ValueError(f"shuffle needs an even clip length >= 4, got {t}")
            sub = t // 2
            starts = transform_rng.integers(0, t - sub + 1, size=3)
            which = int(transform_rng.integers(3))
            perm = tf._non_identity_permutation(sub, transform_rng)
            plans[kind] = (starts, which, perm)
        elif kind == tf.SPEED:
            plans[kind] = tf.plan_speed(n_frames, cfg.clip.num_frames, cfg.tf.speed, transform_rng)
        elif kind == tf.CLIP_ORDER:
            plans[kind] = tf.plan_clip_order(n_frames, cfg.tf.clip_order, transform_rng)

    # fetch pixels (base clip, plus extra windows for video-level transforms)
    base = dataset.get_frames(vid, base_idx)
    out["static"] = is_static(base)
    out["base"] = base
    if key_idx is not None:
        out["key"] = dataset.get_frames(vid, key_idx)

    for kind in cfg.transform_kinds:
        plan = plans[kind]
        if kind == tf.ROTATION:
            angle, jit = plan
            frames = tf.rotate_frames_quarter(base, angle)
            if cfg.tf.rotation.jitter_deg > 0:
                frames = tf.rotate_frames_bilinear(frames, jit)
            views[kind] = {"clips": [frames], "label": angle}
        elif kind == tf.REVERSE:
            frames = base[::-1].copy() if plan == 1 else base
            views[kind] = {"clips": [frames], "label": plan}
        elif kind == tf.SHUFFLE:
            starts, which, perm = plan
            sub = cfg.clip.num_frames // 2
            clips = []
            for i, s in enumerate(starts):
                fr = base[int(s):int(s) + sub]
                clips.append(fr[perm] if i == which else fr)
            views[kind] = {"clips": clips, "label": which}
        elif kind == tf.SPEED:
            frames = dataset.get_frames(vid, plan.frame_indices)
            views[kind] = {"clips": [frames], "label": plan.rate_index}
        elif kind == tf.CLIP_ORDER:
            frames = dataset.get_frames(vid, plan.frame_indices)
            s = cfg.tf.clip_order.subclip_len
            chron = [frames[i * s:(i + 1) * s] for i in range(3)]
            perm3 = tf.PERMUTATIONS_3[plan.perm_index]
            views[kind] = {"clips": [chron[perm3[i]] for i in range(3)], "label": plan.perm_index}
    out["views"] = views
    return out


# ---------------------------------------------------------------------------
# trainer


class Pretrainer:
    """Owns all mutable training state; one instance per run directory."""

    def __init__(self, cfg: ExperimentConfig, out_dir: str):
        cfg.validate()
        self.cfg = cfg
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)

        self.dataset = build_dataset(cfg)
        self.train_indices, _ = split_indices(len(self.dataset), cfg.split.test_every)
        if len(self.train_indices) < 2:
            raise ValueError("need at least 2 training videos")

        self.sampling_rng = named_stream(cfg.seed, "sampling")
        self.transform_rng = named_stream(cfg.seed, "transforms")
        self.negatives_rng = named_stream(cfg.seed, "negatives")

        self.model = TacoModel(
            cfg.encoder, cfg.projection, cfg.task_head, cfg.transform_kinds, cfg.tf,
            with_task_heads=bool(cfg.transform_kinds),
        )
        init_taco_model(self.model, named_stream(cfg.seed, "init"))

        # a run without transforms has no task labels, whatever the config says
        self.objective = cfg.objective
        if not cfg.transform_kinds:
            self.objective = dataclasses.replace(cfg.objective, task_enabled=False)

        cc = cfg.contrastive
        self.bank: Optional[MemoryBank] = None
        self.queue: Optional[MomentumQueue] = None
        self.key_encoder = None
        self.key_proj = None
        if cfg.objective.contrast_enabled:
            if cc.variant == "instdisc":
                self.bank = MemoryBank(
                    len(self.train_indices), cfg.projection.embed_dim,
                    cc.bank_momentum, self.negatives_rng,
                )
            else:
                self.queue = MomentumQueue(cc.queue_size, cfg.projection.embed_dim)
                self.queue.prefill(self.negatives_rng)
                self.key_encoder = copy.deepcopy(self.model.encoder)
                self.key_proj = copy.deepcopy(self.model.proj["original"])
                for m in (self.key_encoder, self.key_proj):
                    for p in m.parameters():
                        p.requires_grad_(False)

        # bank slot index for each dataset video id
        self._slot = {int(v): i for i, v in enumerate(self.train_indices)}

        self.params = dict(self.model.named_parameters())
        self.velocities = {k: torch.zeros_like(p) for k, p in self.params.items()}
        self.epochs_done = 0
        self.global_step = 0

        self.steps_per_epoch = math.ceil(
            len(self.train_indices) * cfg.clips_per_video / cfg.batch_size
        )

    # -- negative store helpers ------------------------------------------

    def _negatives_for(self, slot_ids: torch.Tensor) -> torch.Tensor:
        cc = self.cfg.contrastive
        if self.bank is not None:
            k = min(cc.num_negatives, self.bank.num_instances - 1)
            return self.bank.sample_negatives(slot_ids, k, self.negatives_rng)
        return self.queue.negatives().detach()

    # -- one optimization step -------------------------------------------

    def _step(self, batch: list[dict]) -> dict:
        cfg = self.cfg
        obj = self.objective
        kinds = cfg.transform_kinds
        B = len(batch)
        slot_ids = torch.tensor([self._slot[v["id"]] for v in batch], dtype=torch.long)

        # one encoder pass per distinct clip length, batched in a fixed order
        groups: dict[int, list[np.ndarray]] = {}
        slots: list[tuple[str, int, int, int]] = []  # (tag, T, offset, count)

        def add(tag: str, arrs: list[np.ndarray]) -> None:
            T = arrs[0].shape[0]
            lst = groups.setdefault(T, [])
            slots.append((tag, T, len(lst), len(arrs)))
            lst.extend(arrs)

        add("original", [v["base"] for v in batch])
        for kind in kinds:
            arrs = []
            for v in batch:
                arrs.extend(v["views"][kind]["clips"])
            add(kind, arrs)

        encoded: dict[int, torch.Tensor] = {}
        for T, arrs in groups.items():
            x = clips_to_tensor(np.stack(arrs))
            encoded[T] = self.model.encoder(x)
        feats: dict[str, torch.Tensor] = {}
        for tag, T, off, cnt in slots:
            feats[tag] = encoded[T][off:off + cnt]

        loss_c = None
        z_orig = None
        metrics: dict[str, float] = {}
        if obj.contrast_enabled:
            z_orig = self.model.proj["original"](feats["original"])
            negs = self._negatives_for(slot_ids)
            if not kinds:
                if self.bank is not None:
                    pos = self.bank.lookup(slot_ids).detach()
                    loss_c = nce_pair_loss(z_orig, pos, negs, cfg.contrastive.temperature)
                else:
                    with torch.no_grad():
                        keys = self.key_proj(self.key_encoder(
                            clips_to_tensor(np.stack([v["key"] for v in batch]))
                        ))
                    loss_c = nce_pair_loss(z_orig, keys, negs, cfg.contrastive.temperature)
            else:
                if self.queue is not None:
                    with torch.no_grad():
                        keys = self.key_proj(self.key_encoder(
                            clips_to_tensor(np.stack([v["base"] for v in batch]))
                        ))
                    target = keys
                else:
                    target = z_orig
                loss_c = None
                for kind in kinds:
                    f = feats[kind]
                    n = tf.num_branches(kind)
                    z = self.model.proj[kind](f)
                    if n > 1:
                        z = torch.nn.functional.normalize(
                            z.reshape(B, n, -1).mean(dim=1), dim=-1
                        )
                    pair = nce_pair_loss(z, target, negs, cfg.contrastive.temperature)
                    loss_c = pair if loss_c is None else loss_c + pair
            metrics["loss_contrast"] = float(loss_c.detach())

        loss_t = None
        if obj.task_path_active and kinds:
            logits = {}
            labels = {}
            for kind in kinds:
                f = feats[kind]
                n = tf.num_branches(kind)
                if n > 1:
                    f = f.reshape(B, n, -1)
                logits[kind] = self.model.task[kind](f)
                labels[kind] = torch.tensor(
                    [v["views"][kind]["label"] for v in batch], dtype=torch.long
                )
            loss_t, per_loss, per_acc = task_loss(logits, labels)
            for kind in kinds:
                metrics[f"loss_{kind}"] = per_loss[kind]
                metrics[f"acc_{kind}"] = per_acc[kind]

        total = overall_loss(loss_c, loss_t, obj)
        metrics["loss_total"] = float(total.detach())

        self.model.zero_grad(set_to_none=True)
        total.backward()
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        lr = lr_at(self.global_step, self.steps_per_epoch, cfg.schedule)
        metrics["lr"] = lr
        sgd_momentum_step(
            self.params, grads, self.velocities, lr,
            cfg.schedule.momentum, cfg.schedule.weight_decay,
        )

        if obj.contrast_enabled:
            if self.bank is not None:
                self.bank.update(slot_ids, z_orig.detach())
            else:
                momentum_update(self.key_encoder, self.model.encoder, cfg.contrastive.key_momentum)
                momentum_update(self.key_proj, self.model.proj["original"], cfg.contrastive.key_momentum)
                self.queue.push(keys)

        self.global_step += 1
        return metrics

    # -- epoch loop --------------------------------------------------------

    def _check_store_invariants(self) -> None:
        if self.bank is not None:
            dev = float((self.bank.bank.norm(dim=1) - 1).abs().max())
            if dev > 1e-6:
                raise AssertionError(f"memory bank drifted off unit norm by {dev:.2e}")
        if self.queue is not None and len(self.queue):
            dev = float((self.queue.negatives().norm(dim=1) - 1).abs().max())
            if dev > 1e-6:
                raise AssertionError(f"queue entries drifted off unit norm by {dev:.2e}")

    def run(self, stop_after_epoch: Optional[int] = None) -> str:
        cfg = self.cfg
        total_epochs = cfg.schedule.total_epochs
        cfg_path = os.path.join(self.out_dir, CONFIG_NAME)
        if not os.path.exists(cfg_path):
            dump_yaml(cfg, cfg_path)

        metrics_f = open(os.path.join(self.out_dir, METRICS_NAME), "a")
        epochs_path = os.path.join(self.out_dir, EPOCHS_NAME)
        write_header = not os.path.exists(epochs_path) or os.path.getsize(epochs_path) == 0
        epochs_f = open(epochs_path, "a", newline="")
        epoch_csv = csv.writer(epochs_f)

        need_key_clip = (
            cfg.objective.contrast_enabled
            and cfg.contrastive.variant == "moco"
            and not cfg.transform_kinds
        )

        try:
            while self.epochs_done < total_epochs:
                epoch = self.epochs_done + 1
                t0 = time.perf_counter()
                items = np.repeat(self.train_indices, cfg.clips_per_video)
                order = self.sampling_rng.permutation(items)
                step_rows: list[dict] = []
                static_clips = 0
                for s in range(0, len(order), cfg.batch_size):
                    chunk = order[s:s + cfg.batch_size]
                    batch = [
                        _draw_video_views(
                            self.dataset, int(v), cfg,
                            self.sampling_rng, self.transform_rng, need_key_clip,
                        )
                        for v in chunk
                    ]
                    static_clips += sum(v["static"] for v in batch)
                    t_step = time.perf_counter()
                    m = self._step(batch)
                    rec = {"epoch": epoch, "step": self.global_step - 1}
                    rec.update(m)
                    rec["wall_s"] = round(time.perf_counter() - t_step, 6)
                    metrics_f.write(json.dumps(rec) + "\n")
                    step_rows.append(m)
                self._check_store_invariants()
                self.epochs_done = epoch

                cols = [k for k in step_rows[0] if k != "lr"]
                if write_header:
                    epoch_csv.writerow(["epoch", "lr_last", *cols, "static_clips", "wall_s"])
                    write_header = False
                means = [sum(r[k] for r in step_rows) / len(step_rows) for k in cols]
                epoch_csv.writerow(
                    [epoch, step_rows[-1]["lr"], *[repr(v) for v in means],
                     static_clips, round(time.perf_counter() - t0, 3)]
                )
                metrics_f.flush()
                epochs_f.flush()

                at_interval = cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0
                if at_interval or epoch == total_epochs or epoch == stop_after_epoch:
                    self.save_checkpoint()
                if stop_after_epoch is not None and epoch >= stop_after_epoch:
                    break
        finally:
            metrics_f.close()
            epochs_f.close()
        return os.path.join(self.out_dir, CHECKPOINT_NAME)

    # -- checkpointing -----------------------------------------------------

    def save_checkpoint(self) -> str:
        path = os.path.join(self.out_dir, CHECKPOINT_NAME)
        arrays: dict[str, np.ndarray] = {
            "version": np.array(CHECKPOINT_VERSION, dtype=np.int64),
            "epochs_done": np.array(self.epochs_done, dtype=np.int64),
            "global_step": np.array(self.global_step, dtype=np.int64),
            "config_json": _json_blob(to_dict(self.cfg)),
            "config_hash": _json_blob(config_hash(self.cfg)),
        }
        for name, p in self.params.items():
            arrays[f"param/{name}"] = p.detach().numpy().copy()
            arrays[f"vel/{name}"] = self.velocities[name].numpy().copy()
        if self.bank is not None:
            arrays["bank"] = self.bank.bank.numpy().copy()
        if self.queue is not None:
            arrays["queue_buf"] = self.queue.buf.numpy().copy()
            arrays["queue_ptr"] = np.array(int(self.queue.ptr), dtype=np.int64)
            arrays["queue_filled"] = np.array(int(self.queue.filled), dtype=np.int64)
        if self.key_encoder is not None:
            for name, p in self.key_encoder.named_parameters():
                arrays[f"key_encoder/{name}"] = p.detach().numpy().copy()
            for name, p in self.key_proj.named_parameters():
                arrays[f"key_proj/{name}"] = p.detach().numpy().copy()
        for stream, gen in (
            ("sampling", self.sampling_rng),
            ("transforms", self.transform_rng),
            ("negatives", self.negatives_rng),
        ):
            arrays[f"rng/{stream}"] = _json_blob(capture_state(gen))
        tmp = path + ".tmp"
        with open(tmp, "wb") as f:
            np.savez(f, **arrays)
        os.replace(tmp, path)
        return path

    def restore(self, ck: dict) -> None:
        """Load state produced by `load_checkpoint` into this trainer."""
        if config_hash(self.cfg) != ck["config_hash"]:
            raise ValueError(
                "checkpoint was written by a different config "
                f"(hash {ck['config_hash'][:12]}… vs {config_hash(self.cfg)[:12]}…); "
                "refusing to resume"
            )
        with torch.no_grad():
            for name, p in self.params.items():
                p.copy_(torch.from_numpy(ck["params"][name]))
                self.velocities[name].copy_(torch.from_numpy(ck["velocities"][name]))
        if self.bank is not None:
            self.bank.bank.copy_(torch.from_numpy(ck["bank"]))
        if self.queue is not None:
            self.queue.buf.copy_(torch.from_numpy(ck["queue_buf"]))
            self.queue.ptr.fill_(int(ck["queue_ptr"]))
            self.queue.filled.fill_(int(ck["queue_filled"]))
        if self.key_encoder is not None:
            with torch.no_grad():
                for name, p in self.key_encoder.named_parameters():
                    p.copy_(torch.from_numpy(ck["key_encoder"][name]))
                for name, p in self.key_proj.named_parameters():
                    p.copy_(torch.from_numpy(ck["key_proj"][name]))
        for stream, gen in (
            ("sampling", self.sampling_rng),
            ("transforms", self.transform_rng),
            ("negatives", self.negatives_rng),
        ):
            restore_state(gen, ck["rng"][stream])
        self.epochs_done = int(ck["epochs_done"])
        self.global_step = int(ck["global_step"])


def _json_blob(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode(), dtype=np.uint8)


def _json_unblob(arr: np.ndarray):
    return json.loads(arr.tobytes().decode())


def load_checkpoint(path: str) -> dict:
    """Read a checkpoint into plain numpy arrays and decoded metadata."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path) as z:
        version = int(z["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(
                f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
            )
        out: dict = {
            "version": version,
            "epochs_done": int(z["epochs_done"]),
            "global_step": int(z["global_step"]),
            "config": _json_unblob(z["config_json"]),
            "config_hash": _json_unblob(z["config_hash"]),
            "params": {},
            "velocities": {},
            "key_encoder": {},
            "key_proj": {},
            "rng": {},
        }
        for key in z.files:
            if key.startswith("param/"):
                out["params"][key[6:]] = z[key]
            elif key.startswith("vel/"):
                out["velocities"][key[4:]] = z[key]
            elif key.startswith("key_encoder/"):
                out["key_encoder"][key[12:]] = z[key]
            elif key.startswith("key_proj/"):
                out["key_proj"][key[9:]] = z[key]
            elif key.startswith("rng/"):
                out["rng"][key[4:]] = _json_unblob(z[key])
        for key in ("bank", "queue_buf", "queue_ptr", "queue_filled"):
            if key in z.files:
                out[key] = z[key]
    return out


# ---------------------------------------------------------------------------
# entry points


def pretrain(cfg: ExperimentConfig, out_dir: str, stop_after_epoch: Optional[int] = None) -> str:
    """Run pretraining from scratch; returns the final checkpoint path."""
    os.makedirs(out_dir, exist_ok=True)
    stale = [METRICS_NAME, EPOCHS_NAME, CHECKPOINT_NAME, CONFIG_NAME]
    # cached evaluation results describe the weights being replaced
    stale += [n for n in os.listdir(out_dir) if n.startswith("eval_") and n.endswith(".json")]
    for name in stale:
        p = os.path.join(out_dir, name)
        if os.path.exists(p):
            os.remove(p)
    trainer = Pretrainer(cfg, out_dir)
    return trainer.run(stop_after_epoch=stop_after_epoch)


def resume(out_dir: str, stop_after_epoch: Optional[int] = None) -> str:
    """Continue an interrupted run from its directory, bit-exactly.

    A finished run is a no-op (with a notice); a config mismatch between
    the run directory and its checkpoint is refused.
    """
    cfg_path = os.path.join(out_dir, CONFIG_NAME)
    ck_path = os.path.join(out_dir, CHECKPOINT_NAME)
    if not os.path.exists(cfg_path):
        raise FileNotFoundError(f"no {CONFIG_NAME} in {out_dir}")
    cfg = load_yaml(ExperimentConfig, cfg_path)
    ck = load_checkpoint(ck_path)
    if ck["epochs_done"] >= cfg.schedule.total_epochs:
        print(f"run in {out_dir} already finished ({ck['epochs_done']} epochs); nothing to do")
        return ck_path
    trainer = Pretrainer(cfg, out_dir)
    trainer.restore(ck)
    _truncate_metrics(out_dir, trainer.epochs_done)
    return trainer.run(stop_after_epoch=stop_after_epoch)


def _truncate_metrics(out_dir: str, epochs_done: int) -> None:
    """Drop any step/epoch records newer than the checkpoint boundary."""
    mpath = os.path.join(out_dir, METRICS_NAME)
    if os.path.exists(mpath):
        with open(mpath) as f:
            lines = [ln for ln in f if ln.strip() and json.loads(ln)["epoch"] <= epochs_done]
        with open(mpath, "w") as f:
            f.writelines(lines)
    epath = os.path.join(out_dir, EPOCHS_NAME)
    if os.path.exists(epath):
        with open(epath) as f:
            rows = f.readlines()
        kept = rows[:1] + [r for r in rows[1:] if r.strip() and int(r.split(",", 1)[0]) <= epochs_done]
        with open(epath, "w") as f:
            f.writelines(kept)
