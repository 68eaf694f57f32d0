"""3D-conv video encoder, projection heads, and transform-prediction heads.

The encoder is a small residual 3D CNN sized for quick CPU experiments
(aggressive early downsampling, GroupNorm so results are independent of
batch composition).  Widths, kernels and strides are all configurable, so
larger variants are expressible without code changes.

Parameter initialization draws from a caller-supplied numpy generator in
module-definition order — the framework's global RNG is never touched.
Components are initialized encoder first, projection heads next, task heads
last, so configurations that omit task heads still produce bit-identical
encoder/projection weights for the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import transforms as T


@dataclass
class EncoderConfig:
    widths: tuple[int, ...] = (8, 16, 32, 64)
    stem_kernel: tuple[int, int, int] = (3, 5, 5)
    stem_stride: tuple[int, int, int] = (2, 4, 4)
    # one (t, h, w) stride per residual stage; time is only strided in the
    # stem so short clips keep enough temporal resolution for order cues
    stage_strides: tuple[tuple[int, int, int], ...] = ((1, 1, 1), (1, 2, 2), (1, 2, 2), (1, 1, 1))
    block_kernel: tuple[int, int, int] = (3, 3, 3)
    gn_groups: int = 4
    # starting residual branches at zero helps very deep nets; at this depth
    # it starves the blocks of gradient on subtle temporal signals
    zero_init_residual: bool = False

    def validate(self) -> None:
        if len(self.widths) < 1:
            raise ValueError("widths must be non-empty")
        if len(self.stage_strides) != len(self.widths):
            raise ValueError(
                f"need one stage stride per width: {len(self.widths)} widths, "
                f"{len(self.stage_strides)} strides"
            )
        for w in self.widths:
            if w % self.gn_groups != 0:
                raise ValueError(
                    f"width {w} not divisible by gn_groups={self.gn_groups}"
                )
        for k, s in (("stem_kernel", self.stem_kernel), ("stem_stride", self.stem_stride),
                     ("block_kernel", self.block_kernel)):
            if len(s) != 3 or any(int(v) < 1 for v in s):
                raise ValueError(f"{k} must be three positive ints, got {s}")
        if any(self.stem_kernel[i] < self.stem_stride[i] for i in range(3)):
            raise ValueError(
                f"stem kernel {self.stem_kernel} must cover stem stride "
                f"{self.stem_stride} or some input frames/pixels are never seen"
            )

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]


class ResidualBlock3d(nn.Module):
    """conv-gn-relu-conv-gn + skip; 1x1x1 projection when shape changes."""

    def __init__(self, in_ch: int, out_ch: int, stride: tuple[int, int, int],
                 kernel: tuple[int, int, int], groups: int):
        super().__init__()
        pad = tuple(k // 2 for k in kernel)
        self.conv1 = nn.Conv3d(in_ch, out_ch, kernel, stride=stride, padding=pad, bias=False)
        self.gn1 = nn.GroupNorm(groups, out_ch)
        self.conv2 = nn.Conv3d(out_ch, out_ch, kernel, stride=1, padding=pad, bias=False)
        self.gn2 = nn.GroupNorm(groups, out_ch)
        if in_ch != out_ch or any(s != 1 for s in stride):
            self.down: Optional[nn.Module] = nn.Sequential(
                nn.Conv3d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.GroupNorm(groups, out_ch),
            )
        else:
            self.down = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        identity = self.down(x) if self.down is not None else x
        out = self.gn2(self.conv2(F.relu(self.gn1(self.conv1(x)))))
        return F.relu(out + identity)


class VideoEncoder(nn.Module):
    """Maps a clip batch (B, 3, T, H, W) to features (B, feature_dim)."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        w0 = cfg.widths[0]
        pad = tuple(k // 2 for k in cfg.stem_kernel)
        self.stem = nn.Sequential(
            nn.Conv3d(3, w0, cfg.stem_kernel, stride=cfg.stem_stride, padding=pad, bias=False),
            nn.GroupNorm(cfg.gn_groups, w0),
            nn.ReLU(inplace=True),
        )
        blocks = []
        in_ch = w0
        for width, stride in zip(cfg.widths, cfg.stage_strides):
            blocks.append(ResidualBlock3d(in_ch, width, stride, cfg.block_kernel, cfg.gn_groups))
            in_ch = width
        self.blocks = nn.ModuleList(blocks)
        self.pool = nn.AdaptiveAvgPool3d(1)

    @property
    def feature_dim(self) -> int:
        return self.cfg.feature_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 5 or x.shape[1] != 3:
            raise ValueError(
                f"expected clips shaped (B, 3, T, H, W), got {tuple(x.shape)}"
            )
        if x.shape[2] < 2:
            raise ValueError(f"clips need at least 2 frames, got T={x.shape[2]}")
        h = self.stem(x)
        for b in self.blocks:
            h = b(h)
        return self.pool(h).flatten(1)


def clips_to_tensor(frames: np.ndarray) -> torch.Tensor:
    """(B, T, H, W, 3) float arrays -> (B, 3, T, H, W) float32 tensor."""
    arr = np.asarray(frames)
    if arr.ndim == 4:  # single clip
        arr = arr[None]
    if arr.ndim != 5 or arr.shape[-1] != 3:
        raise ValueError(f"expected (B, T, H, W, 3) frames, got {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 4, 1, 2, 3))).float()


# ---------------------------------------------------------------------------
# projection heads (contrastive embeddings)


@dataclass
class ProjectionConfig:
    embed_dim: int = 64
    # the nonlinear head absorbs the view-invariance pressure of the
    # contrastive loss, which otherwise fights the pretext tasks for the
    # encoder features; "linear" is the single-FC variant
    variant: str = "mlp"  # "linear" | "mlp"

    def validate(self) -> None:
        if self.embed_dim < 2:
            raise ValueError(f"embed_dim must be >= 2, got {self.embed_dim}")
        if self.variant not in ("linear", "mlp"):
            raise ValueError(f"variant must be 'linear' or 'mlp', got {self.variant!r}")


class ProjectionHead(nn.Module):
    """Feature -> unit-norm contrastive embedding."""

    def __init__(self, in_dim: int, cfg: ProjectionConfig):
        super().__init__()
        cfg.validate()
        if cfg.variant == "linear":
            self.net = nn.Linear(in_dim, cfg.embed_dim)
        else:
            self.net = nn.Sequential(
                nn.Linear(in_dim, in_dim), nn.ReLU(inplace=True),
                nn.Linear(in_dim, cfg.embed_dim),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.net(x), dim=-1)


def project(feature: torch.Tensor, head: ProjectionHead) -> torch.Tensor:
    """Embed features with `head`; output rows are unit-norm."""
    return head(feature)


# ---------------------------------------------------------------------------
# task heads (transform-label prediction)


@dataclass
class TaskHeadConfig:
    hidden_dim: int = 64

    def validate(self) -> None:
        if self.hidden_dim < 2:
            raise ValueError(f"hidden_dim must be >= 2, got {self.hidden_dim}")


class NormalizedLinearHead(nn.Module):
    """l2-normalize the feature, then one linear layer of logits.

    Used for rotation and reverse.  A zero feature maps to the bias vector
    (normalize leaves zeros untouched).
    """

    def __init__(self, in_dim: int, num_classes: int):
        super().__init__()
        self.fc = nn.Linear(in_dim, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 2:
            raise ValueError(f"expected features (B, D), got {tuple(x.shape)}")
        return self.fc(F.normalize(x, dim=-1))


class PairwiseDifferenceHead(nn.Module):
    """Multi-branch head: shared linear per branch, summed pairwise
    activation differences, then a two-layer trunk.

    Consumes (B, n_branches, D) stacked branch features.  Used for shuffle
    (3 branches, 3 logits) and clip order (3 branches, 6 logits).
    """

    def __init__(self, in_dim: int, hidden_dim: int, num_classes: int, branches: int = 3):
        super().__init__()
        if branches < 2:
            raise ValueError(f"need at least 2 branches, got {branches}")
        self.branches = branches
        self.branch_fc = nn.Linear(in_dim, hidden_dim)
        self.trunk = nn.Sequential(
            nn.Linear(hidden_dim, hidden_dim), nn.ReLU(inplace=True),
            nn.Linear(hidden_dim, num_classes),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 3 or x.shape[1] != self.branches:
            raise ValueError(
                f"expected (B, {self.branches}, D) branch features, got {tuple(x.shape)}"
            )
        a = self.branch_fc(x)  # (B, n, h)
        fused = torch.zeros_like(a[:, 0])
        n = self.branches
        for i in range(n):
            for j in range(i + 1, n):
                fused = fused + (a[:, i] - a[:, j])
        return self.trunk(fused)


class SpeedHead(nn.Module):
    """Single-feature variant of the shuffle trunk: linear-relu-linear."""

    def __init__(self, in_dim: int, hidden_dim: int, num_classes: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden_dim), nn.ReLU(inplace=True),
            nn.Linear(hidden_dim, num_classes),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 2:
            raise ValueError(f"expected features (B, D), got {tuple(x.shape)}")
        return self.net(x)


def build_task_head(
    kind: str, feature_dim: int, head_cfg: TaskHeadConfig, tf_cfgs: T.TransformConfigs
) -> nn.Module:
    """Construct the prediction head matching a transform kind."""
    head_cfg.validate()
    space = T.label_space(kind, tf_cfgs)
    if kind in (T.ROTATION, T.REVERSE):
        return NormalizedLinearHead(feature_dim, space)
    if kind in (T.SHUFFLE, T.CLIP_ORDER):
        return PairwiseDifferenceHead(feature_dim, head_cfg.hidden_dim, space, branches=3)
    if kind == T.SPEED:
        return SpeedHead(feature_dim, head_cfg.hidden_dim, space)
    raise ValueError(f"unknown transform kind {kind!r}")


# ---------------------------------------------------------------------------
# full model bundle


class TacoModel(nn.Module):
    """Encoder + per-view projection heads + per-transform task heads.

    The original (untransformed) clip gets its own projection head and no
    task head.  Each enabled transform gets both.
    """

    def __init__(
        self,
        enc_cfg: EncoderConfig,
        proj_cfg: ProjectionConfig,
        head_cfg: TaskHeadConfig,
        transform_kinds: Sequence[str],
        tf_cfgs: T.TransformConfigs,
        with_task_heads: bool = True,
    ):
        super().__init__()
        kinds = T.validate_kinds(transform_kinds) if transform_kinds else ()
        self.transform_kinds = kinds
        self.encoder = VideoEncoder(enc_cfg)
        d = self.encoder.feature_dim
        proj = {"original": ProjectionHead(d, proj_cfg)}
        for k in kinds:
            proj[k] = ProjectionHead(d, proj_cfg)
        self.proj = nn.ModuleDict(proj)
        if with_task_heads:
            self.task = nn.ModuleDict(
                {k: build_task_head(k, d, head_cfg, tf_cfgs) for k in kinds}
            )
        else:
            self.task = nn.ModuleDict({})

    def encode(self, clips: torch.Tensor) -> torch.Tensor:
        return self.encoder(clips)


def init_parameters(
    module: nn.Module, rng: np.random.Generator, zero_init_residual: bool = False
) -> None:
    """Deterministically initialize all parameters from a numpy stream.

    Draw order follows module definition order, so two architecturally
    identical modules initialized with generators in the same state end up
    bit-identical.  Conv/linear weights are He-normal in fan-in; norm scales
    1 (or 0 on each block's last norm when `zero_init_residual`); biases 0.
    """
    with torch.no_grad():
        for name, p in module.named_parameters():
            if p.ndim >= 2:  # conv / linear weight
                fan_in = int(np.prod(p.shape[1:]))
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=tuple(p.shape))
                p.copy_(torch.from_numpy(w).to(p.dtype))
            elif name.endswith("weight"):  # norm scale
                p.fill_(1.0)
            else:  # bias
                p.zero_()
        if zero_init_residual:
            for m in module.modules():
                if isinstance(m, ResidualBlock3d):
                    m.gn2.weight.zero_()  # residual branch starts as identity


def init_taco_model(model: TacoModel, rng: np.random.Generator) -> None:
    """Init in the fixed component order: encoder, projections, task heads."""
    init_parameters(model.encoder, rng, zero_init_residual=model.encoder.cfg.zero_init_residual)
    init_parameters(model.proj["original"], rng)
    for k in model.transform_kinds:
        init_parameters(model.proj[k], rng)
    for k in model.transform_kinds:
        if k in model.task:
            init_parameters(model.task[k], rng)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
