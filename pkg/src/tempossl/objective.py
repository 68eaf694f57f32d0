"""Joint training objective, learning-rate schedule, and optimizer step.

The overall loss is

    L = L_contrast + lambda * L_task

with L_task the unweighted sum of per-transform cross-entropies.  The
schedule is a linear warmup into a half-period cosine that reaches exactly
zero on the final step.  The optimizer is classical SGD with momentum and
decoupled-from-nothing weight decay (decay is added to the gradient, the
standard SGD formulation); velocities are plain tensors so checkpoints can
serialize them directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import torch
import torch.nn.functional as F


@dataclass
class ObjectiveConfig:
    lam: float = 10.0
    contrast_enabled: bool = True
    task_enabled: bool = True

    def validate(self) -> None:
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if not (self.contrast_enabled or self.task_enabled):
            raise ValueError("at least one of contrast/task must be enabled")

    @property
    def task_path_active(self) -> bool:
        """Whether task heads participate in forward/backward at all.

        lam == 0 silences the task term entirely, which keeps a lam=0 run
        bit-identical to a contrastive-only run from the same seed.
        """
        return self.task_enabled and self.lam > 0


@dataclass
class ScheduleConfig:
    # tuned so that lam * base_lr sits in the window where the task heads
    # break out of chance within a few epochs without oscillating
    base_lr: float = 0.0015
    warmup_epochs: int = 2
    total_epochs: int = 30
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def validate(self) -> None:
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if self.warmup_epochs < 0:
            raise ValueError(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")
        if self.total_epochs <= self.warmup_epochs:
            raise ValueError(
                f"total_epochs ({self.total_epochs}) must exceed warmup_epochs "
                f"({self.warmup_epochs})"
            )
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")


def lr_at(step: int, steps_per_epoch: int, cfg: ScheduleConfig) -> float:
    """Learning rate for global `step` (0-based).

    Steps 0..warmup-1 ramp linearly as base * (step + 1) / warmup_steps; the
    remainder follows base * 0.5 * (1 + cos(pi * t)) where t sweeps (0, 1]
    so the very last step lands exactly on zero.
    """
    cfg.validate()
    if steps_per_epoch < 1:
        raise ValueError(f"steps_per_epoch must be >= 1, got {steps_per_epoch}")
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    warm = cfg.warmup_epochs * steps_per_epoch
    total = cfg.total_epochs * steps_per_epoch
    if step >= total:
        raise ValueError(f"step {step} beyond schedule end {total}")
    if step < warm:
        return cfg.base_lr * (step + 1) / warm
    t = (step - warm + 1) / (total - warm)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * t))


def task_loss(
    logits: Mapping[str, torch.Tensor], labels: Mapping[str, torch.Tensor]
) -> tuple[torch.Tensor, dict[str, float], dict[str, float]]:
    """Unweighted sum of per-transform cross-entropies.

    Returns (total, per-task loss floats, per-task accuracy floats).
    """
    if not logits:
        raise ValueError("no task logits given")
    if set(logits) != set(labels):
        raise ValueError(f"logits/labels keys differ: {sorted(logits)} vs {sorted(labels)}")
    total = None
    losses: dict[str, float] = {}
    accs: dict[str, float] = {}
    for kind in logits:
        lg, lb = logits[kind], labels[kind]
        if lg.ndim != 2:
            raise ValueError(f"{kind}: logits must be (B, L), got {tuple(lg.shape)}")
        if lb.ndim != 1 or lb.shape[0] != lg.shape[0]:
            raise ValueError(f"{kind}: labels must be ({lg.shape[0]},), got {tuple(lb.shape)}")
        if lb.numel() and (lb.min() < 0 or lb.max() >= lg.shape[1]):
            raise ValueError(
                f"{kind}: labels outside [0, {lg.shape[1]}): "
                f"[{int(lb.min())}, {int(lb.max())}]"
            )
        ce = F.cross_entropy(lg, lb)
        total = ce if total is None else total + ce
        losses[kind] = float(ce.detach())
        accs[kind] = float((lg.detach().argmax(1) == lb).float().mean())
    return total, losses, accs


def overall_loss(
    l_contrast: torch.Tensor | None, l_task: torch.Tensor | None, cfg: ObjectiveConfig
) -> torch.Tensor:
    """Combine the enabled terms; rejects non-finite inputs."""
    cfg.validate()
    parts = []
    if cfg.contrast_enabled:
        if l_contrast is None:
            raise ValueError("contrast is enabled but no contrast loss was given")
        parts.append(l_contrast)
    if cfg.task_path_active:
        if l_task is None:
            raise ValueError("task loss is active but no task loss was given")
        # task-only mode: the raw task loss is the objective, lam only
        # scales it relative to a present contrast term
        parts.append(cfg.lam * l_task if cfg.contrast_enabled else l_task)
    total = parts[0] if len(parts) == 1 else parts[0] + parts[1]
    if not torch.isfinite(total):
        raise FloatingPointError(f"non-finite training loss: {float(total)}")
    return total


def sgd_momentum_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
    velocities: dict[str, torch.Tensor],
    lr: float,
    momentum: float,
    weight_decay: float,
) -> None:
    """One in-place classical SGD step: v <- m v + (g + wd p); p <- p - lr v.

    `params`, `grads` and `velocities` must share keys and shapes; entries
    missing from `grads` (e.g. frozen or unused parameters) are skipped
    entirely — their velocities stay untouched.
    """
    if lr < 0:
        raise ValueError(f"lr must be >= 0, got {lr}")
    extra = grads.keys() - params.keys()
    if extra:
        raise ValueError(f"grads for unknown parameters: {sorted(extra)}")
    if params.keys() != velocities.keys():
        raise ValueError(
            f"velocity keys differ from params: missing "
            f"{sorted(params.keys() - velocities.keys())}, extra "
            f"{sorted(velocities.keys() - params.keys())}"
        )
    with torch.no_grad():
        for name, g in grads.items():
            p, v = params[name], velocities[name]
            if g.shape != p.shape:
                raise ValueError(f"grad shape mismatch at {name}: {tuple(g.shape)} vs {tuple(p.shape)}")
            if weight_decay:
                g = g + weight_decay * p
            v.mul_(momentum).add_(g)
            p.sub_(lr * v)
