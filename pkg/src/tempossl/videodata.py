"""Video containers, a procedural motion dataset, clip sampling, and disk IO.

The synthetic dataset is built so that *motion*, not appearance, carries the
class signal: each video shows one antialiased shape translating across a
wrap-around (torus) canvas.  The class decides only how strongly the motion
accelerates (each class is a total first-to-last speed-up factor), while
shape, size, color, start position, heading, pulse phase and base speed
are randomized per video.  A single frame is therefore class-uninformative by construction,
and so is any instantaneous speed reading: only the *change* of speed over
time separates the classes.

Three further properties keep the pretext tasks well-posed:

* every class accelerates (all factors exceed 1), giving time a universal
  arrow — played backwards, motion decelerates,
* shape luminance and radius oscillate at one fixed period with a per-video
  random phase: the apparent pulse frequency anchors the frame rate (a
  subsampled clip pulses proportionally faster), while a sinusoid played
  backwards is still a sinusoid, so the pulse tells neither classes nor
  playback directions apart, and
* the background carries a fixed vertical luminance gradient, anchoring
  absolute orientation for the rotation task.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from PIL import Image

SHAPE_KINDS = ("square", "circle", "triangle", "cross")


# ---------------------------------------------------------------------------
# containers


@dataclass
class Video:
    """A full video: frames (L, H, W, 3) float32 in [0, 1]."""

    frames: np.ndarray
    id: int = -1
    class_label: Optional[int] = None

    def validate(self) -> None:
        f = self.frames
        if not isinstance(f, np.ndarray) or f.ndim != 4 or f.shape[-1] != 3:
            raise ValueError(f"frames must be (L, H, W, 3), got {getattr(f, 'shape', None)}")
        if f.shape[0] < 2:
            raise ValueError(f"video needs at least 2 frames, got {f.shape[0]}")
        if f.dtype != np.float32:
            raise ValueError(f"frames must be float32, got {f.dtype}")
        if f.size and (f.min() < 0.0 or f.max() > 1.0):
            raise ValueError("frame values must lie in [0, 1]")

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])


@dataclass
class Clip:
    """A fixed-length frame window cut from a video, with provenance."""

    frames: np.ndarray  # (T, H, W, 3) float32
    video_id: int = -1
    start: int = 0

    def validate(self) -> None:
        f = self.frames
        if not isinstance(f, np.ndarray) or f.ndim != 4 or f.shape[-1] != 3:
            raise ValueError(f"clip frames must be (T, H, W, 3), got {getattr(f, 'shape', None)}")
        if f.shape[0] < 2:
            raise ValueError(f"clip needs at least 2 frames, got {f.shape[0]}")

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])


def is_static(frames: np.ndarray, tol: float = 1e-4) -> bool:
    """True if all frames are (numerically) identical to the first."""
    if frames.shape[0] < 2:
        return True
    return bool(np.max(np.abs(frames - frames[:1])) < tol)


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass
class SyntheticSpec:
    """Everything needed to deterministically re-render one synthetic video."""

    motion_class: int
    num_classes: int
    length: int
    height: int
    width: int
    shape: str
    start_y: float
    start_x: float
    speed: float                 # px/frame at frame 0
    heading_deg: float           # movement direction, 0 = rightward
    accel_total: float           # speed(L-1) / speed(0); set by motion_class
    size: float                  # shape radius, px
    angle0_deg: float            # initial shape orientation
    spin_deg_per_frame: float
    pulse_period: float          # luminance/size oscillation period, frames
    pulse_amplitude: float       # relative luminance swing, 0 disables
    pulse_size_amplitude: float  # relative radius swing, 0 disables
    pulse_phase_deg: float
    color: tuple[float, float, float]

    def validate(self) -> None:
        if not 0 <= self.motion_class < self.num_classes:
            raise ValueError(
                f"motion_class {self.motion_class} outside [0, {self.num_classes})"
            )
        if self.length < 2:
            raise ValueError(f"length must be >= 2, got {self.length}")
        if self.height < 8 or self.width < 8:
            raise ValueError(f"frames must be at least 8x8, got {self.height}x{self.width}")
        if self.shape not in SHAPE_KINDS:
            raise ValueError(f"unknown shape {self.shape!r}, expected one of {SHAPE_KINDS}")
        if self.speed <= 0:
            raise ValueError(f"speed must be positive, got {self.speed}")
        if self.accel_total <= 0:
            raise ValueError(f"accel_total must be positive, got {self.accel_total}")
        if self.size <= 0:
            raise ValueError(f"size must be positive, got {self.size}")
        if self.pulse_period <= 0:
            raise ValueError(f"pulse_period must be positive, got {self.pulse_period}")
        if not 0.0 <= self.pulse_amplitude < 1.0:
            raise ValueError(f"pulse_amplitude must be in [0, 1), got {self.pulse_amplitude}")
        if not 0.0 <= self.pulse_size_amplitude < 1.0:
            raise ValueError(
                f"pulse_size_amplitude must be in [0, 1), got {self.pulse_size_amplitude}"
            )


@dataclass
class SyntheticDataConfig:
    """Knobs for building a balanced synthetic dataset."""

    num_videos: int = 2000
    num_classes: int = 4
    num_frames: int = 64
    height: int = 32
    width: int = 32
    speed_range: tuple[float, float] = (0.30, 0.42)
    # total speed-up factor per class; geometric spacing keeps neighbours
    # equally hard to tell apart
    accel_by_class: tuple[float, ...] = (1.6, 2.5, 4.0, 6.3)
    size_range: tuple[float, float] = (4.5, 7.0)
    # optional per-frame spin magnitude (sign drawn per video); off by default
    spin_range: tuple[float, float] = (0.0, 0.0)
    # shape luminance and radius oscillate at a fixed period with a random
    # phase: the apparent pulse frequency anchors the frame rate (a subsampled
    # clip pulses proportionally faster) without telling classes or playback
    # directions apart.  The radius component survives representation pressure
    # toward photometric invariance, which tends to wash out pure flicker.
    pulse_period_frames: float = 16.0
    pulse_amplitude: float = 0.15
    pulse_size_amplitude: float = 0.12

    def validate(self) -> None:
        if self.num_videos < 1:
            raise ValueError(f"num_videos must be >= 1, got {self.num_videos}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.accel_by_class) != self.num_classes:
            raise ValueError(
                f"accel_by_class has {len(self.accel_by_class)} entries "
                f"for {self.num_classes} classes"
            )
        if any(a <= 0 for a in self.accel_by_class):
            raise ValueError(f"accel factors must be positive, got {self.accel_by_class}")
        if self.num_frames < 2:
            raise ValueError(f"num_frames must be >= 2, got {self.num_frames}")
        if self.height < 8 or self.width < 8:
            raise ValueError(f"frames must be at least 8x8, got {self.height}x{self.width}")
        lo, hi = self.speed_range
        if not (0 < lo <= hi):
            raise ValueError(f"speed_range must satisfy 0 < lo <= hi, got {self.speed_range}")
        lo, hi = self.size_range
        if not (0 < lo <= hi):
            raise ValueError(f"size_range must satisfy 0 < lo <= hi, got {self.size_range}")
        lo, hi = self.spin_range
        if not (0 <= lo <= hi):
            raise ValueError(f"spin_range must satisfy 0 <= lo <= hi, got {self.spin_range}")
        if self.pulse_period_frames <= 0:
            raise ValueError(f"pulse_period_frames must be positive, got {self.pulse_period_frames}")
        if not 0.0 <= self.pulse_amplitude < 1.0:
            raise ValueError(f"pulse_amplitude must be in [0, 1), got {self.pulse_amplitude}")
        if not 0.0 <= self.pulse_size_amplitude < 1.0:
            raise ValueError(
                f"pulse_size_amplitude must be in [0, 1), got {self.pulse_size_amplitude}"
            )


def make_synthetic_specs(cfg: SyntheticDataConfig, rng: np.random.Generator) -> list[SyntheticSpec]:
    """Draw per-video parameters.  Classes are balanced round-robin."""
    cfg.validate()
    specs = []
    for i in range(cfg.num_videos):
        cls = i % cfg.num_classes
        specs.append(
            SyntheticSpec(
                motion_class=cls,
                num_classes=cfg.num_classes,
                length=cfg.num_frames,
                height=cfg.height,
                width=cfg.width,
                shape=SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))],
                start_y=float(rng.uniform(0, cfg.height)),
                start_x=float(rng.uniform(0, cfg.width)),
                speed=float(rng.uniform(*cfg.speed_range)),
                heading_deg=float(rng.uniform(0, 360)),
                accel_total=float(cfg.accel_by_class[cls]),
                size=float(rng.uniform(*cfg.size_range)),
                angle0_deg=float(rng.uniform(0, 360)),
                spin_deg_per_frame=float(rng.uniform(*cfg.spin_range) * rng.choice((-1.0, 1.0))),
                pulse_period=float(cfg.pulse_period_frames),
                pulse_amplitude=float(cfg.pulse_amplitude),
                pulse_size_amplitude=float(cfg.pulse_size_amplitude),
                pulse_phase_deg=float(rng.uniform(0, 360)),
                color=tuple(float(c) for c in rng.uniform(0.65, 1.0, size=3)),
            )
        )
    return specs


def _positions(spec: SyntheticSpec, upto: int) -> np.ndarray:
    """Shape center (y, x) for frames 0..upto-1.  Speed grows geometrically."""
    if spec.length > 1:
        g = spec.accel_total ** (1.0 / (spec.length - 1))
    else:
        g = 1.0
    t = np.arange(upto, dtype=np.float64)
    # displacement magnitude accumulated before frame t: speed * sum_{k<t} g^k
    if abs(g - 1.0) < 1e-12:
        dist = spec.speed * t
    else:
        dist = spec.speed * (g ** t - 1.0) / (g - 1.0)
    theta = math.radians(spec.heading_deg)
    dx = math.cos(theta) * dist
    dy = -math.sin(theta) * dist  # image y grows downward
    return np.stack([spec.start_y + dy, spec.start_x + dx], axis=1)


def _shape_sdf(dy: np.ndarray, dx: np.ndarray, kind: str, size: float) -> np.ndarray:
    """Signed distance (<0 inside) from wrap-aware offsets to the shape edge."""
    if kind == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) - size
    if kind == "circle":
        return np.hypot(dx, dy) - size
    if kind == "triangle":
        # upward equilateral triangle with circumradius `size`
        d = -np.inf * np.ones_like(dx)
        for k in range(3):
            a = math.radians(90 + 120 * k)
            # inner normal of each edge points toward the centroid
            nx, ny = -math.cos(a), math.sin(a)
            d = np.maximum(d, nx * dx + ny * dy - size * 0.5)
        return d
    if kind == "cross":
        w = 0.35 * size
        horiz = np.maximum(np.abs(dx) - size, np.abs(dy) - w)
        vert = np.maximum(np.abs(dy) - size, np.abs(dx) - w)
        return np.minimum(horiz, vert)
    raise ValueError(f"unknown shape {kind!r}")


def render_frames(spec: SyntheticSpec, indices: Sequence[int]) -> np.ndarray:
    """Render only the requested frame indices, (n, H, W, 3) float32.

    Rendering is pure: the same (spec, index) pair always produces the same
    pixels, so clips can be cut lazily without materializing whole videos.
    """
    spec.validate()
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("indices must be non-empty")
    if idx.min() < 0 or idx.max() >= spec.length:
        raise ValueError(
            f"frame indices must lie in [0, {spec.length}), got range "
            f"[{idx.min()}, {idx.max()}]"
        )
    H, W = spec.height, spec.width
    pos = _positions(spec, int(idx.max()) + 1)[idx]

    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    # fixed vertical luminance gradient: bright top, dark bottom
    bg = (0.42 - 0.24 * (yy / (H - 1)))[None, :, :, None]

    # wrap-aware offsets from each frame's shape center (torus topology)
    cy = pos[:, 0][:, None, None]
    cx = pos[:, 1][:, None, None]
    dy = (yy[None] - cy + H / 2) % H - H / 2
    dx = (xx[None] - cx + W / 2) % W - W / 2

    ang = np.radians(spec.angle0_deg + spec.spin_deg_per_frame * idx.astype(np.float64))
    ca, sa = np.cos(ang)[:, None, None], np.sin(ang)[:, None, None]
    rx = ca * dx - sa * dy
    ry = sa * dx + ca * dy

    pulse = np.cos(np.radians(spec.pulse_phase_deg) + 2.0 * np.pi * idx / spec.pulse_period)
    size = spec.size
    if spec.pulse_size_amplitude > 0:
        # the shape breathes around its base radius, in phase with the flicker
        size = size * (1.0 + spec.pulse_size_amplitude * pulse)[:, None, None]
    sdf = _shape_sdf(ry, rx, spec.shape, size)
    alpha = np.clip(0.5 - sdf, 0.0, 1.0)[..., None]

    color = np.asarray(spec.color, dtype=np.float64)[None, None, None, :]
    if spec.pulse_amplitude > 0:
        # normalized so the brightest phase equals the base color
        m = (1.0 + spec.pulse_amplitude * pulse) / (1.0 + spec.pulse_amplitude)
        color = color * m[:, None, None, None]
    frames = bg * (1.0 - alpha) + color * alpha
    return np.clip(frames, 0.0, 1.0).astype(np.float32)


def generate_synthetic_video(spec: SyntheticSpec) -> Video:
    """Render the full video described by `spec`."""
    frames = render_frames(spec, range(spec.length))
    v = Video(frames=frames, id=-1, class_label=spec.motion_class)
    v.validate()
    return v


# ---------------------------------------------------------------------------
# datasets and manifests


class VideoDataset:
    """A list of videos, each backed by a synthetic spec or a frame directory.

    Videos materialize lazily on first touch and are then memoized, so a
    training loop pays the render/decode cost once per video rather than
    once per epoch.  Costs ~0.75 MB per 64x32x32 video; pass
    ``cache_videos=False`` when a dataset is too large to keep around.
    """

    def __init__(self, entries: list[dict], cache_videos: bool = True):
        if not entries:
            raise ValueError("dataset must contain at least one video")
        self._entries = entries
        self._cache_videos = cache_videos
        self._frame_cache: dict[int, np.ndarray] = {}
        for i, e in enumerate(entries):
            if ("spec" in e) == ("path" in e):
                raise ValueError(f"entry {i} must have exactly one of 'spec' or 'path'")

    @classmethod
    def from_specs(cls, specs: Sequence[SyntheticSpec], cache_videos: bool = True) -> "VideoDataset":
        return cls([{"spec": s, "class": s.motion_class} for s in specs], cache_videos=cache_videos)

    def __len__(self) -> int:
        return len(self._entries)

    def class_label(self, i: int) -> Optional[int]:
        return self._entries[i].get("class")

    def num_frames(self, i: int) -> int:
        e = self._entries[i]
        if "spec" in e:
            return e["spec"].length
        return self._all_frames(i).shape[0]

    def spec(self, i: int) -> Optional[SyntheticSpec]:
        return self._entries[i].get("spec")

    def _all_frames(self, i: int) -> np.ndarray:
        frames = self._frame_cache.get(i)
        if frames is None:
            e = self._entries[i]
            if "spec" in e:
                frames = render_frames(e["spec"], range(e["spec"].length))
            else:
                frames = load_video_frames(e["path"]).frames
            if self._cache_videos:
                self._frame_cache[i] = frames
        return frames

    def get_video(self, i: int) -> Video:
        e = self._entries[i]
        v = Video(frames=self._all_frames(i), id=i, class_label=e.get("class"))
        v.validate()
        return v

    def get_frames(self, i: int, indices: Sequence[int]) -> np.ndarray:
        """Fetch a subset of frames of video `i` without materializing copies.

        Uncached synthetic entries render only the requested indices.
        """
        e = self._entries[i]
        if not self._cache_videos and "spec" in e:
            return render_frames(e["spec"], indices)
        return self._all_frames(i)[np.asarray(indices, dtype=np.int64)]


def write_manifest(dataset: VideoDataset, path: str) -> None:
    """Write a JSONL manifest; synthetic entries embed their full spec."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        for i in range(len(dataset)):
            e = dataset._entries[i]
            row: dict = {"id": i, "class": e.get("class")}
            if "spec" in e:
                row["synthetic"] = dataclasses.asdict(e["spec"])
            else:
                row["path"] = e["path"]
            f.write(json.dumps(row, sort_keys=True) + "\n")


def load_manifest(path: str, cache_videos: bool = True) -> VideoDataset:
    if not os.path.exists(path):
        raise FileNotFoundError(f"manifest not found: {path}")
    entries = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({e})") from None
            if "synthetic" in row:
                d = dict(row["synthetic"])
                d["color"] = tuple(d["color"])
                entries.append({"spec": SyntheticSpec(**d), "class": row.get("class")})
            elif "path" in row:
                entries.append({"path": row["path"], "class": row.get("class")})
            else:
                raise ValueError(f"{path}:{lineno}: row needs 'synthetic' or 'path'")
    return VideoDataset(entries, cache_videos=cache_videos)


# ---------------------------------------------------------------------------
# clip sampling


@dataclass
class ClipSampleConfig:
    num_frames: int = 8
    stride: int = 8
    start_policy: str = "random"  # "random" | "begin"

    def validate(self) -> None:
        if self.num_frames < 2:
            raise ValueError(f"num_frames must be >= 2, got {self.num_frames}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.start_policy not in ("random", "begin"):
            raise ValueError(
                f"start_policy must be 'random' or 'begin', got {self.start_policy!r}"
            )

    @property
    def span(self) -> int:
        """Number of source frames a clip reaches across."""
        return (self.num_frames - 1) * self.stride + 1


def max_clip_start(video_len: int, cfg: ClipSampleConfig) -> int:
    """Largest valid start index, or raise if the video is too short."""
    cfg.validate()
    if video_len < cfg.span:
        raise ValueError(
            f"video has {video_len} frames; sampling {cfg.num_frames} frames at "
            f"stride {cfg.stride} requires at least {cfg.span}"
        )
    return video_len - cfg.span


def sample_clip_start(video_len: int, cfg: ClipSampleConfig, rng: np.random.Generator) -> int:
    hi = max_clip_start(video_len, cfg)
    if cfg.start_policy == "begin":
        return 0
    return int(rng.integers(0, hi + 1))


def clip_frame_indices(start: int, cfg: ClipSampleConfig) -> np.ndarray:
    return start + cfg.stride * np.arange(cfg.num_frames, dtype=np.int64)


def uniform_clip_starts(video_len: int, cfg: ClipSampleConfig, num_clips: int) -> np.ndarray:
    """Evenly spaced start indices (deduplicated, sorted) for multi-clip eval.

    A video with a single valid start returns exactly one entry, whatever
    `num_clips` asks for.
    """
    if num_clips < 1:
        raise ValueError(f"num_clips must be >= 1, got {num_clips}")
    hi = max_clip_start(video_len, cfg)
    starts = np.unique(np.round(np.linspace(0, hi, num_clips)).astype(np.int64))
    return starts


def sample_clip(video: Video, cfg: ClipSampleConfig, rng: np.random.Generator) -> Clip:
    """Cut one clip out of a materialized video."""
    start = sample_clip_start(video.num_frames, cfg, rng)
    idx = clip_frame_indices(start, cfg)
    return Clip(frames=video.frames[idx], video_id=video.id, start=start)


# ---------------------------------------------------------------------------
# frame-directory IO

_FRAME_EXTS = (".png", ".jpg", ".jpeg")


def write_video_frames(video: Video, out_dir: str) -> None:
    """Save a video as zero-padded PNG frames (000000.png, 000001.png, ...)."""
    os.makedirs(out_dir, exist_ok=True)
    arr = np.clip(np.round(video.frames * 255.0), 0, 255).astype(np.uint8)
    for t in range(arr.shape[0]):
        Image.fromarray(arr[t]).save(os.path.join(out_dir, f"{t:06d}.png"))


def load_video_frames(frame_dir: str) -> Video:
    """Load a frame directory (sorted filename order) into a Video."""
    if not os.path.isdir(frame_dir):
        raise FileNotFoundError(f"frame directory not found: {frame_dir}")
    names = sorted(n for n in os.listdir(frame_dir) if n.lower().endswith(_FRAME_EXTS))
    if not names:
        raise ValueError(f"no image frames found in {frame_dir}")
    frames = []
    shape = None
    for n in names:
        p = os.path.join(frame_dir, n)
        try:
            img = np.asarray(Image.open(p).convert("RGB"), dtype=np.float32) / 255.0
        except Exception as e:
            raise ValueError(f"could not read frame {p}: {e}") from None
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise ValueError(
                f"frame {p} has size {img.shape[:2]}, expected {shape[:2]} "
                f"(all frames of a video must match)"
            )
        frames.append(img)
    v = Video(frames=np.stack(frames), id=-1)
    v.validate()
    return v
