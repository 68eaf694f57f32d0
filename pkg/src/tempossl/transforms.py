"""Temporal transforms that double as contrastive views and pretext tasks.

Each transform consumes a clip (or a whole video, for the ones that need a
wider frame window), produces one or more transformed clips, and emits the
label a task head must predict:

* ``rotation_jitter`` — rotate every frame by one of {0, 90, 180, 270}
  degrees plus a small per-frame jitter; predict the quarter-turn (4-way).
* ``reverse`` — play forward or backward; predict the direction (2-way).
* ``shuffle`` — cut three half-length subclips, shuffle the frames of one;
  predict which subclip is out of order (3-way).
* ``speed`` — subsample the video at one of several frame rates; predict
  the rate (|rates|-way).
* ``clip_order`` — cut three disjoint subclips and permute their order;
  predict the permutation (6-way).

All randomness comes from the caller's generator, with a fixed draw order
per transform, so outcomes are reproducible given (input, seed).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .videodata import Clip, Video

ROTATION = "rotation_jitter"
REVERSE = "reverse"
SHUFFLE = "shuffle"
SPEED = "speed"
CLIP_ORDER = "clip_order"

ALL_KINDS = (ROTATION, REVERSE, SHUFFLE, SPEED, CLIP_ORDER)
DEFAULT_KINDS = (ROTATION, REVERSE, SHUFFLE, SPEED)

# lexicographic permutations of (0, 1, 2); index 0 is chronological order
PERMUTATIONS_3 = tuple(itertools.permutations(range(3)))


# ---------------------------------------------------------------------------
# configs


@dataclass
class RotationJitterConfig:
    jitter_deg: float = 3.0  # per-frame jitter drawn uniformly from [-j, j]

    def validate(self) -> None:
        if self.jitter_deg < 0:
            raise ValueError(f"jitter_deg must be >= 0, got {self.jitter_deg}")


@dataclass
class ShuffleConfig:
    def validate(self) -> None:  # no knobs: subclip length is half the clip
        pass


@dataclass
class SpeedConfig:
    rates: tuple[int, ...] = (1, 2, 4)

    def validate(self) -> None:
        if len(self.rates) < 2:
            raise ValueError(f"need at least 2 rates, got {self.rates}")
        if any(int(r) != r or r < 1 for r in self.rates):
            raise ValueError(f"rates must be positive integers, got {self.rates}")
        if list(self.rates) != sorted(set(self.rates)):
            raise ValueError(f"rates must be strictly increasing, got {self.rates}")
        if self.rates[0] != 1:
            raise ValueError(f"rate 1 (normal speed) must be included, got {self.rates}")


@dataclass
class ClipOrderConfig:
    subclip_len: int = 8

    def validate(self) -> None:
        if self.subclip_len < 2:
            raise ValueError(f"subclip_len must be >= 2, got {self.subclip_len}")


@dataclass
class TransformConfigs:
    rotation: RotationJitterConfig = field(default_factory=RotationJitterConfig)
    shuffle: ShuffleConfig = field(default_factory=ShuffleConfig)
    speed: SpeedConfig = field(default_factory=SpeedConfig)
    clip_order: ClipOrderConfig = field(default_factory=ClipOrderConfig)

    def validate(self) -> None:
        self.rotation.validate()
        self.shuffle.validate()
        self.speed.validate()
        self.clip_order.validate()


def validate_kinds(kinds: Sequence[str]) -> tuple[str, ...]:
    """Check a transform-set selection: non-empty, known, no duplicates."""
    if not kinds:
        raise ValueError("transform set must not be empty")
    unknown = [k for k in kinds if k not in ALL_KINDS]
    if unknown:
        raise ValueError(f"unknown transform kinds {unknown}; expected subset of {ALL_KINDS}")
    if len(set(kinds)) != len(kinds):
        raise ValueError(f"duplicate transform kinds in {tuple(kinds)}")
    return tuple(kinds)


def label_space(kind: str, cfgs: TransformConfigs) -> int:
    """Number of labels the task head for `kind` must discriminate."""
    if kind == ROTATION:
        return 4
    if kind == REVERSE:
        return 2
    if kind == SHUFFLE:
        return 3
    if kind == SPEED:
        return len(cfgs.speed.rates)
    if kind == CLIP_ORDER:
        return 6
    raise ValueError(f"unknown transform kind {kind!r}")


def num_branches(kind: str) -> int:
    """How many clips the transform emits (and its task head consumes)."""
    return 3 if kind in (SHUFFLE, CLIP_ORDER) else 1


# ---------------------------------------------------------------------------
# outcome container


@dataclass
class TransformOutcome:
    kind: str
    clips: list[Clip]
    task_label: int
    label_space: int

    def validate(self) -> None:
        if self.kind not in ALL_KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if len(self.clips) != num_branches(self.kind):
            raise ValueError(
                f"{self.kind} must emit {num_branches(self.kind)} clips, got {len(self.clips)}"
            )
        if not 0 <= self.task_label < self.label_space:
            raise ValueError(
                f"task_label {self.task_label} outside [0, {self.label_space})"
            )
        for c in self.clips:
            c.validate()


# ---------------------------------------------------------------------------
# rotation


def rotate_frames_quarter(frames: np.ndarray, k: int) -> np.ndarray:
    """Exact counterclockwise rotation by k quarter turns (lossless)."""
    if frames.shape[1] != frames.shape[2]:
        raise ValueError(
            f"rotation requires square frames, got {frames.shape[1]}x{frames.shape[2]}"
        )
    return np.ascontiguousarray(np.rot90(frames, k=int(k) % 4, axes=(1, 2)))


def rotate_frames_bilinear(frames: np.ndarray, angles_deg: np.ndarray) -> np.ndarray:
    """Rotate each frame about its center by its own small angle (CCW).

    Bilinear resampling, zero fill outside bounds.  Intended for the small
    jitter component; quarter turns should use `rotate_frames_quarter`.
    """
    T, H, W = frames.shape[:3]
    if H != W:
        raise ValueError(f"rotation requires square frames, got {H}x{W}")
    angles = np.asarray(angles_deg, dtype=np.float64)
    if angles.shape != (T,):
        raise ValueError(f"need one angle per frame: expected ({T},), got {angles.shape}")

    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    dy, dx = yy - cy, xx - cx

    # inverse map, all frames at once: source coords of each output pixel
    # (CCW output rotation), shape (T, H, W)
    rad = np.radians(angles)[:, None, None]
    ca, sa = np.cos(rad), np.sin(rad)
    sy = cy + (sa * dx + ca * dy)
    sx = cx + (ca * dx - sa * dy)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy, fx = sy - y0, sx - x0

    tt = np.arange(T, dtype=np.int64)[:, None, None]
    acc = np.zeros(frames.shape, dtype=np.float64)
    for oy, wy in ((0, 1.0 - fy), (1, fy)):
        for ox, wx in ((0, 1.0 - fx), (1, fx)):
            ys, xs = y0 + oy, x0 + ox
            inside = (ys >= 0) & (ys < H) & (xs >= 0) & (xs < W)
            vals = frames[tt, np.clip(ys, 0, H - 1), np.clip(xs, 0, W - 1)]
            acc += (wy * wx * inside)[..., None] * vals
    return acc.astype(np.float32)


def rotation_jitter(
    clip: Clip,
    cfg: RotationJitterConfig,
    rng: np.random.Generator,
    angle_index: Optional[int] = None,
) -> TransformOutcome:
    """Quarter-turn + per-frame jitter.  Draw order: angle_index, then jitters."""
    cfg.validate()
    clip.validate()
    if angle_index is None:
        angle_index = int(rng.integers(4))
    if not 0 <= angle_index < 4:
        raise ValueError(f"angle_index must be in [0, 4), got {angle_index}")
    jitters = rng.uniform(-cfg.jitter_deg, cfg.jitter_deg, size=clip.num_frames)
    frames = rotate_frames_quarter(clip.frames, angle_index)
    if cfg.jitter_deg > 0:
        frames = rotate_frames_bilinear(frames, jitters)
    out = Clip(frames=frames, video_id=clip.video_id, start=clip.start)
    return TransformOutcome(kind=ROTATION, clips=[out], task_label=angle_index, label_space=4)


def recover_rotation_label(original: np.ndarray, rotated: np.ndarray) -> tuple[int, float]:
    """Best-of-4 inverse search: (recovered label, its mean abs pixel error)."""
    best_k, best_err = -1, np.inf
    for k in range(4):
        undone = rotate_frames_quarter(rotated, (4 - k) % 4)
        err = float(np.mean(np.abs(undone - original)))
        if err < best_err:
            best_k, best_err = k, err
    return best_k, best_err


# ---------------------------------------------------------------------------
# reverse


def reverse_clip(
    clip: Clip, rng: Optional[np.random.Generator] = None, direction: Optional[int] = None
) -> TransformOutcome:
    """Forward (label 0) or backward (label 1) playback.  One rng draw."""
    clip.validate()
    if direction is None:
        if rng is None:
            raise ValueError("need either a direction or an rng to draw one")
        direction = int(rng.integers(2))
    if direction not in (0, 1):
        raise ValueError(f"direction must be 0 or 1, got {direction}")
    frames = clip.frames[::-1].copy() if direction == 1 else clip.frames.copy()
    out = Clip(frames=frames, video_id=clip.video_id, start=clip.start)
    return TransformOutcome(kind=REVERSE, clips=[out], task_label=direction, label_space=2)


# ---------------------------------------------------------------------------
# shuffle


def _non_identity_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform over the n!-1 non-identity permutations (rejection sampling)."""
    ident = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if np.any(perm != ident):
            return perm


def shuffle_subclips(clip: Clip, cfg: ShuffleConfig, rng: np.random.Generator) -> TransformOutcome:
    """Three half-length subclips; the frames of one are shuffled.

    Subclip starts may overlap.  Draw order: 3 starts, the shuffled subclip
    index, then the (non-identity) frame permutation.
    """
    cfg.validate()
    clip.validate()
    t = clip.num_frames
    if t < 4 or t % 2 != 0:
        raise ValueError(f"shuffle needs an even clip length >= 4, got {t}")
    sub = t // 2
    starts = rng.integers(0, t - sub + 1, size=3)
    which = int(rng.integers(3))
    perm = _non_identity_permutation(sub, rng)
    clips = []
    for i, s in enumerate(starts):
        frames = clip.frames[int(s):int(s) + sub]
        if i == which:
            frames = frames[perm]
        clips.append(Clip(frames=frames.copy(), video_id=clip.video_id, start=clip.start + int(s)))
    return TransformOutcome(kind=SHUFFLE, clips=clips, task_label=which, label_space=3)


# ---------------------------------------------------------------------------
# speed


@dataclass
class SpeedPlan:
    """Where to cut a speed clip: resolved before any pixels are touched."""

    rate_index: int
    rate: int
    start: int
    frame_indices: np.ndarray


def plan_speed(
    video_len: int,
    num_frames: int,
    cfg: SpeedConfig,
    rng: np.random.Generator,
    rate_index: Optional[int] = None,
) -> SpeedPlan:
    """Draw order: rate index (unless given), then start."""
    cfg.validate()
    if rate_index is None:
        rate_index = int(rng.integers(len(cfg.rates)))
    if not 0 <= rate_index < len(cfg.rates):
        raise ValueError(f"rate_index {rate_index} outside [0, {len(cfg.rates)})")
    rate = int(cfg.rates[rate_index])
    span = (num_frames - 1) * rate + 1
    if video_len < span:
        raise ValueError(
            f"video has {video_len} frames; {num_frames} frames at rate {rate} "
            f"need at least {span}"
        )
    start = int(rng.integers(0, video_len - span + 1))
    idx = start + rate * np.arange(num_frames, dtype=np.int64)
    return SpeedPlan(rate_index=rate_index, rate=rate, start=start, frame_indices=idx)


def speed_outcome(frames: np.ndarray, plan: SpeedPlan, video_id: int, num_rates: int) -> TransformOutcome:
    """Wrap already-fetched frames (at plan.frame_indices) into an outcome."""
    clip = Clip(frames=frames, video_id=video_id, start=plan.start)
    return TransformOutcome(kind=SPEED, clips=[clip], task_label=plan.rate_index, label_space=num_rates)


def speed_clip(
    video: Video,
    num_frames: int,
    cfg: SpeedConfig,
    rng: np.random.Generator,
    rate_index: Optional[int] = None,
) -> TransformOutcome:
    """Cut a clip from `video` at a (possibly drawn) playback rate."""
    plan = plan_speed(video.num_frames, num_frames, cfg, rng, rate_index)
    return speed_outcome(video.frames[plan.frame_indices], plan, video.id, len(cfg.rates))


# ---------------------------------------------------------------------------
# clip order


@dataclass
class ClipOrderPlan:
    perm_index: int
    starts: tuple[int, int, int]  # chronological window starts (disjoint)
    frame_indices: np.ndarray     # concatenated indices of the 3 windows


def plan_clip_order(
    video_len: int, cfg: ClipOrderConfig, rng: np.random.Generator
) -> ClipOrderPlan:
    """Three disjoint windows, then a drawn presentation order.

    Draw order: 3 slack offsets (sorted), then the permutation index.
    """
    cfg.validate()
    s = cfg.subclip_len
    if video_len < 3 * s:
        raise ValueError(
            f"video has {video_len} frames; 3 disjoint subclips of {s} need {3 * s}"
        )
    slack = video_len - 3 * s
    offs = np.sort(rng.integers(0, slack + 1, size=3))
    starts = (int(offs[0]), int(offs[1]) + s, int(offs[2]) + 2 * s)
    perm_index = int(rng.integers(6))
    idx = np.concatenate([st + np.arange(s, dtype=np.int64) for st in starts])
    return ClipOrderPlan(perm_index=perm_index, starts=starts, frame_indices=idx)


def clip_order_outcome(
    frames: np.ndarray, plan: ClipOrderPlan, video_id: int, cfg: ClipOrderConfig
) -> TransformOutcome:
    """Frames must correspond to plan.frame_indices (3 windows, concatenated)."""
    s = cfg.subclip_len
    chron = [frames[i * s:(i + 1) * s] for i in range(3)]
    perm = PERMUTATIONS_3[plan.perm_index]
    clips = [
        Clip(frames=chron[perm[i]].copy(), video_id=video_id, start=plan.starts[perm[i]])
        for i in range(3)
    ]
    return TransformOutcome(
        kind=CLIP_ORDER, clips=clips, task_label=plan.perm_index, label_space=6
    )


def clip_order_task(video: Video, cfg: ClipOrderConfig, rng: np.random.Generator) -> TransformOutcome:
    plan = plan_clip_order(video.num_frames, cfg, rng)
    return clip_order_outcome(video.frames[plan.frame_indices], plan, video.id, cfg)


# ---------------------------------------------------------------------------
# driver


def apply_transform(
    kind: str,
    video: Video,
    base_clip: Clip,
    cfgs: TransformConfigs,
    rng: np.random.Generator,
) -> TransformOutcome:
    """Apply one transform, drawing its label and internals from `rng`."""
    if kind == ROTATION:
        return rotation_jitter(base_clip, cfgs.rotation, rng)
    if kind == REVERSE:
        return reverse_clip(base_clip, rng)
    if kind == SHUFFLE:
        return shuffle_subclips(base_clip, cfgs.shuffle, rng)
    if kind == SPEED:
        return speed_clip(video, base_clip.num_frames, cfgs.speed, rng)
    if kind == CLIP_ORDER:
        return clip_order_task(video, cfgs.clip_order, rng)
    raise ValueError(f"unknown transform kind {kind!r}")


def apply_transform_set(
    kinds: Sequence[str],
    video: Video,
    base_clip: Clip,
    cfgs: TransformConfigs,
    rng: np.random.Generator,
) -> list[TransformOutcome]:
    """Apply every transform in `kinds` (in order) to one video/clip pair."""
    validate_kinds(kinds)
    return [apply_transform(k, video, base_clip, cfgs, rng) for k in kinds]
