"""Training objectives.

Every objective reduces per sequence first (mean over the positions that
contribute to each term), then averages over the batch.  Teacher logits are
always treated as constants.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch

TAU_FLOOR = 0.05


class LossKind(str, Enum):
    PRETRAIN_CE = "pretrain_ce"
    HYBRID = "hybrid"
    KL_FWD = "kl_fwd"
    KL_BWD = "kl_bwd"


class NonFiniteLossError(FloatingPointError):
    def __init__(self, index: int, where: str = "batch"):
        super().__init__(f"non-finite loss at {where} index {index}")
        self.index = index


@dataclass
class LossParts:
    total: torch.Tensor
    kl: torch.Tensor
    ce: torch.Tensor
    per_row: torch.Tensor


def _t(x, dtype=None):
    out = torch.as_tensor(x)
    return out if dtype is None else out.to(dtype)


def sharpen(teacher_logits: torch.Tensor, tau: float) -> torch.Tensor:
    """Log-probabilities of ``p ** (1 / tau)`` renormalised."""
    tau = max(float(tau), TAU_FLOOR)
    return torch.log_softmax(torch.log_softmax(teacher_logits, dim=-1) / tau, dim=-1)


def _masked_mean(values: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    count = weights.sum(dim=-1)
    total = (values * weights).sum(dim=-1)
    return torch.where(count > 0, total / count.clamp(min=1), torch.zeros_like(total))


def _raise_if_nonfinite(per_row: torch.Tensor) -> None:
    bad = ~torch.isfinite(per_row.detach())
    if bool(bad.any()):
        raise NonFiniteLossError(int(torch.nonzero(bad)[0, 0]))


def pretrain_ce(logits, x0, masked, t) -> LossParts:
    """Continuous-time masked NELBO for the linear schedule.

    Per sequence ``(1/t) * sum_{masked i} CE_i / L``.
    """
    logits = _t(logits)
    x0 = _t(x0, torch.long)
    m = _t(masked).to(logits.dtype)
    t = _t(t, logits.dtype).reshape(-1)
    ce = -torch.log_softmax(logits, dim=-1).gather(-1, x0.unsqueeze(-1)).squeeze(-1)
    ce = torch.where(m > 0, ce, torch.zeros_like(ce))
    per_row = (ce * m).sum(dim=-1) / (m.shape[-1] * t)
    _raise_if_nonfinite(per_row)
    total = per_row.mean()
    return LossParts(total, torch.zeros_like(total), total, per_row)


def loss_mcd(student_logits, teacher_logits, x0, m_t, m_s, tau: float,
             variant: LossKind | str = LossKind.HYBRID) -> LossParts:
    """Consistency objective on a coupled pair.

    hybrid: KL(student || sharpened teacher) on positions masked in both
    views, plus cross-entropy to ``x0`` on positions only the teacher sees.
    kl_fwd / kl_bwd: KL(teacher || student) / KL(student || teacher) on the
    doubly-masked positions only.
    """
    variant = LossKind(variant)
    if variant is LossKind.PRETRAIN_CE:
        raise ValueError("pretrain_ce is not a distillation variant")
    student_logits = _t(student_logits)
    m_t = _t(m_t).bool()
    m_s = _t(m_s).bool()
    if bool((m_s & ~m_t).any()):
        raise ValueError("m_s must be <= m_t elementwise (teacher sees a superset)")
    x0 = _t(x0, torch.long)
    dtype = student_logits.dtype

    log_p = torch.log_softmax(student_logits, dim=-1)
    log_q = sharpen(_t(teacher_logits, dtype).detach(), tau)
    if variant is LossKind.KL_FWD:
        kl = (log_q.exp() * (log_q - log_p)).sum(dim=-1)
    else:
        kl = (log_p.exp() * (log_p - log_q)).sum(dim=-1)
    both = m_s.to(dtype)
    kl_row = _masked_mean(torch.where(m_s, kl, torch.zeros_like(kl)), both)

    if variant is LossKind.HYBRID:
        only_teacher = (m_t & ~m_s).to(dtype)
        ce = -log_p.gather(-1, x0.unsqueeze(-1)).squeeze(-1)
        ce_row = _masked_mean(torch.where(only_teacher > 0, ce, torch.zeros_like(ce)), only_teacher)
    else:
        ce_row = torch.zeros_like(kl_row)

    per_row = kl_row + ce_row
    _raise_if_nonfinite(per_row)
    return LossParts(per_row.mean(), kl_row.mean(), ce_row.mean(), per_row)


def compute_loss(model, batch: dict, kind: LossKind | str, tau: float = 1.0) -> LossParts:
    """Evaluate an objective on ``batch``.

    Keys: ``pretrain_ce`` needs ``z``, ``x0``, ``mask``, ``t``; the
    distillation variants need ``z_t``, ``x0``, ``m_t``, ``m_s`` and
    ``teacher_logits``.
    """
    kind = LossKind(kind)
    if kind is LossKind.PRETRAIN_CE:
        return pretrain_ce(model(batch["z"]), batch["x0"], batch["mask"], batch["t"])
    return loss_mcd(model(batch["z_t"]), batch["teacher_logits"], batch["x0"],
                    batch["m_t"], batch["m_s"], tau, kind)


def loss_and_gradient(model, batch: dict, kind: LossKind | str, tau: float = 1.0):
    """Return ``(loss, {name: gradient array})``; parameters are not modified."""
    params = dict(model.named_parameters())
    for p in params.values():
        p.grad = None
    parts = compute_loss(model, batch, kind, tau)
    grads = torch.autograd.grad(parts.total, list(params.values()), allow_unused=True)
    out = {}
    for (name, p), g in zip(params.items(), grads):
        out[name] = np.zeros(p.shape, dtype=np.float64) if g is None else g.detach().numpy().astype(np.float64)
    return float(parts.total.detach()), out
