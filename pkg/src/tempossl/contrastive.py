"""Noise-contrastive estimation over unit embeddings, plus negative stores.

The pair loss treats the original clip's embedding as the positive for each
transformed view and scores it against a pool of negatives:

    loss = -log( exp(s_pos / tau) / sum_j exp(s_j / tau) )

where the positive similarity is included in the denominator sum and all
similarities are cosine (embeddings are unit-norm, so plain dot products).
Computation runs on log-sum-exp, so large 1/tau never overflows.

Two interchangeable negative stores are provided: a per-instance memory
bank (slots updated by exponential moving average) and a FIFO momentum
queue fed by a slowly-updated key encoder.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

_NORM_TOL = 1e-4


@dataclass
class ContrastiveConfig:
    temperature: float = 0.07
    variant: str = "instdisc"  # "instdisc" | "moco"
    num_negatives: int = 512   # negatives sampled per example (instdisc)
    bank_momentum: float = 0.5
    queue_size: int = 4096
    key_momentum: float = 0.999

    def validate(self) -> None:
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.variant not in ("instdisc", "moco"):
            raise ValueError(f"variant must be 'instdisc' or 'moco', got {self.variant!r}")
        if self.num_negatives < 1:
            raise ValueError(f"num_negatives must be >= 1, got {self.num_negatives}")
        if not 0.0 <= self.bank_momentum < 1.0:
            raise ValueError(f"bank_momentum must be in [0, 1), got {self.bank_momentum}")
        if self.queue_size < 1:
            raise ValueError(f"queue_size must be >= 1, got {self.queue_size}")
        if not 0.0 <= self.key_momentum < 1.0:
            raise ValueError(f"key_momentum must be in [0, 1), got {self.key_momentum}")


def cosine_similarity(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Cosine similarity along the last dim; rejects zero vectors."""
    if u.shape[-1] != v.shape[-1]:
        raise ValueError(f"dim mismatch: {u.shape[-1]} vs {v.shape[-1]}")
    nu = u.norm(dim=-1)
    nv = v.norm(dim=-1)
    if (nu == 0).any() or (nv == 0).any():
        raise ValueError("cosine similarity undefined for zero vectors")
    return (u * v).sum(-1) / (nu * nv)


def _check_unit(name: str, x: torch.Tensor) -> None:
    err = (x.norm(dim=-1) - 1.0).abs().max().item() if x.numel() else 0.0
    if err > _NORM_TOL:
        raise ValueError(
            f"{name} must be unit-norm (max deviation {err:.2e} > {_NORM_TOL:g}); "
            f"pass embeddings through a projection head first"
        )


def nce_pair_loss(
    z_view: torch.Tensor,
    z_orig: torch.Tensor,
    negatives: torch.Tensor,
    temperature: float,
) -> torch.Tensor:
    """Loss for one (transformed view, original) pair against negatives.

    Accepts single vectors (d,) with negatives (K, d), or batches (B, d)
    with negatives (K, d) shared or (B, K, d) per-example.  Returns a
    scalar (mean over the batch).  The positive term is part of the
    denominator, so the loss is strictly positive whenever K >= 1.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    squeeze = z_view.ndim == 1
    if squeeze:
        z_view, z_orig = z_view[None], z_orig[None]
    if z_view.shape != z_orig.shape:
        raise ValueError(f"view/original shape mismatch: {tuple(z_view.shape)} vs {tuple(z_orig.shape)}")
    if negatives.ndim == 2:
        negatives = negatives[None].expand(z_view.shape[0], -1, -1)
    if negatives.ndim != 3 or negatives.shape[0] != z_view.shape[0]:
        raise ValueError(
            f"negatives must be (K, d) or (B, K, d); got {tuple(negatives.shape)} "
            f"for batch {z_view.shape[0]}"
        )
    _check_unit("z_view", z_view)
    _check_unit("z_orig", z_orig)
    _check_unit("negatives", negatives)

    pos = (z_view * z_orig).sum(-1, keepdim=True)                  # (B, 1)
    neg = torch.einsum("bd,bkd->bk", z_view, negatives)            # (B, K)
    logits = torch.cat([pos, neg], dim=1) / temperature
    loss = torch.logsumexp(logits, dim=1) - logits[:, 0]
    return loss.mean()


def contrast_loss(
    view_embeddings: Sequence[torch.Tensor],
    z_orig: torch.Tensor,
    negatives: torch.Tensor,
    temperature: float,
) -> torch.Tensor:
    """Sum of pair losses over every (transformed view, original) pair."""
    if len(view_embeddings) == 0:
        raise ValueError("need at least one transformed view")
    total = view_embeddings[0].new_zeros(())
    for z in view_embeddings:
        total = total + nce_pair_loss(z, z_orig, negatives, temperature)
    return total


# ---------------------------------------------------------------------------
# negative stores


class MemoryBank(nn.Module):
    """One embedding slot per dataset instance, EMA-updated and re-normalized."""

    def __init__(self, num_instances: int, dim: int, momentum: float, rng: np.random.Generator):
        super().__init__()
        if num_instances < 2:
            raise ValueError(f"need at least 2 instances, got {num_instances}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self.momentum = float(momentum)
        init = rng.normal(size=(num_instances, dim))
        init /= np.linalg.norm(init, axis=1, keepdims=True)
        self.register_buffer("bank", torch.from_numpy(init).float())

    @property
    def num_instances(self) -> int:
        return int(self.bank.shape[0])

    def _check_ids(self, ids: torch.Tensor) -> torch.Tensor:
        ids = torch.as_tensor(ids, dtype=torch.long)
        if ids.numel() and (ids.min() < 0 or ids.max() >= self.num_instances):
            raise IndexError(
                f"instance ids must lie in [0, {self.num_instances}), "
                f"got range [{int(ids.min())}, {int(ids.max())}]"
            )
        return ids

    def lookup(self, ids: torch.Tensor) -> torch.Tensor:
        return self.bank[self._check_ids(ids)]

    @torch.no_grad()
    def update(self, ids: torch.Tensor, z: torch.Tensor) -> None:
        """slot <- normalize(momentum * slot + (1 - momentum) * z)."""
        ids = self._check_ids(ids)
        if z.shape != (ids.numel(), self.bank.shape[1]):
            raise ValueError(f"expected embeddings {(ids.numel(), int(self.bank.shape[1]))}, got {tuple(z.shape)}")
        mixed = self.momentum * self.bank[ids] + (1.0 - self.momentum) * z.detach()
        self.bank[ids] = F.normalize(mixed, dim=-1)

    def sample_negatives(
        self, ids: torch.Tensor, k: int, rng: np.random.Generator
    ) -> torch.Tensor:
        """(B, k, d) slots drawn without replacement, never an example's own."""
        ids = self._check_ids(ids)
        n = self.num_instances
        if k > n - 1:
            raise ValueError(f"cannot sample {k} negatives from {n - 1} other instances")
        rows = np.empty((ids.numel(), k), dtype=np.int64)
        for b, own in enumerate(ids.tolist()):
            draw = rng.choice(n - 1, size=k, replace=False)
            draw = draw + (draw >= own)  # skip own slot
            rows[b] = draw
        return self.bank[torch.from_numpy(rows)]


class MomentumQueue(nn.Module):
    """Fixed-capacity FIFO of key embeddings (oldest evicted first)."""

    def __init__(self, capacity: int, dim: int):
        super().__init__()
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.register_buffer("buf", torch.zeros(capacity, dim))
        self.register_buffer("ptr", torch.zeros((), dtype=torch.long))
        self.register_buffer("filled", torch.zeros((), dtype=torch.long))

    @property
    def capacity(self) -> int:
        return int(self.buf.shape[0])

    def __len__(self) -> int:
        return int(self.filled.item())

    @torch.no_grad()
    def push(self, keys: torch.Tensor) -> None:
        if keys.ndim != 2 or keys.shape[1] != self.buf.shape[1]:
            raise ValueError(f"expected keys (n, {int(self.buf.shape[1])}), got {tuple(keys.shape)}")
        keys = keys.detach()
        if keys.shape[0] > self.capacity:  # only the newest fit
            keys = keys[-self.capacity:]
        p = int(self.ptr.item())
        n = keys.shape[0]
        end = min(p + n, self.capacity)
        self.buf[p:end] = keys[: end - p]
        rest = n - (end - p)
        if rest:
            self.buf[:rest] = keys[end - p:]
        self.ptr.fill_((p + n) % self.capacity)
        self.filled.fill_(min(int(self.filled.item()) + n, self.capacity))

    def contents(self) -> torch.Tensor:
        """Current entries, oldest first (the reference-list order)."""
        f, p = len(self), int(self.ptr.item())
        if f < self.capacity:
            return self.buf[:f].clone()
        return torch.cat([self.buf[p:], self.buf[:p]], dim=0)

    def negatives(self) -> torch.Tensor:
        """All current entries (order irrelevant to the loss)."""
        if len(self) == 0:
            raise ValueError("queue is empty; push keys (or prefill) before sampling")
        return self.buf[: len(self)] if len(self) < self.capacity else self.buf

    @torch.no_grad()
    def prefill(self, rng: np.random.Generator) -> None:
        """Fill to capacity with random unit vectors (cold-start negatives)."""
        init = rng.normal(size=tuple(self.buf.shape))
        init /= np.linalg.norm(init, axis=1, keepdims=True)
        self.buf.copy_(torch.from_numpy(init).float())
        self.ptr.fill_(0)
        self.filled.fill_(self.capacity)


@torch.no_grad()
def momentum_update(key_module: nn.Module, query_module: nn.Module, momentum: float) -> None:
    """key <- momentum * key + (1 - momentum) * query, parameter-wise."""
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must be in [0, 1), got {momentum}")
    kp = dict(key_module.named_parameters())
    qp = dict(query_module.named_parameters())
    if kp.keys() != qp.keys():
        only_k = sorted(kp.keys() - qp.keys())
        only_q = sorted(qp.keys() - kp.keys())
        raise ValueError(f"parameter structure mismatch: key-only {only_k}, query-only {only_q}")
    for name, p in kp.items():
        q = qp[name]
        if p.shape != q.shape:
            raise ValueError(f"shape mismatch at {name}: {tuple(p.shape)} vs {tuple(q.shape)}")
        p.mul_(momentum).add_(q.detach(), alpha=1.0 - momentum)
