"""Teacher pretraining and staged masked consistency distillation."""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .denoiser import Denoiser, param_digest
from .losses import LossKind, NonFiniteLossError, loss_mcd, pretrain_ce
from .masking import coupled_pair, forward_sample
from .rng import substream
from .schedule import Schedule, gamma

log = logging.getLogger(__name__)

METRICS_HEADER = ["round", "step", "delta", "tau", "loss_total", "loss_kl", "loss_ce", "grad_norm"]


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, step: int, dump_path=None):
        super().__init__(message)
        self.step = step
        self.dump_path = dump_path


def make_optimizer(model: torch.nn.Module, lr: float, warmup: int):
    opt = torch.optim.Adam(model.parameters(), lr=lr, betas=(0.9, 0.999), eps=1e-8)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda i: min(1.0, (i + 1) / max(warmup, 1)))
    return opt, sched


def _step(model, opt, sched, loss, grad_clip: float) -> float:
    opt.zero_grad(set_to_none=True)
    loss.backward()
    if grad_clip and grad_clip > 0:
        norm = torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    else:
        norm = torch.sqrt(sum((p.grad.detach() ** 2).sum() for p in model.parameters() if p.grad is not None))
    opt.step()
    sched.step()
    return float(norm)


@dataclass
class PretrainConfig:
    steps: int = 6000
    lr: float = 2e-3
    warmup: int = 200
    batch: int = 32
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"pretraining needs steps >= 1, got {self.steps}")


def pretrain_teacher(stream, model: Denoiser, cfg: PretrainConfig, schedule: Schedule | None = None,
                     dump_path=None, log_every: int = 500) -> list[float]:
    """Train ``model`` in place on independently masked data; returns the per-step loss."""
    if cfg.steps < 1:
        raise ValueError("steps must be >= 1")
    schedule = schedule or Schedule()
    rng = substream(cfg.seed, "pretrain")
    opt, sched = make_optimizer(model, cfg.lr, cfg.warmup)
    mask_id = model.cfg.mask_id
    losses = []
    model.train()
    for step in range(1, cfg.steps + 1):
        x0 = stream.sample(rng, cfg.batch)
        t = rng.uniform(schedule.t_min, 1.0, size=cfg.batch)
        z = forward_sample(x0, gamma(schedule, t), rng, mask_id)
        try:
            parts = pretrain_ce(model(z), x0, z == mask_id, t)
        except NonFiniteLossError as exc:
            if dump_path is not None:
                save_checkpoint(model, dump_path, {"step": step})
            raise TrainingDiverged(f"pretraining loss non-finite at step {step}: {exc}", step, dump_path) from exc
        _step(model, opt, sched, parts.total, cfg.grad_clip)
        losses.append(float(parts.total.detach()))
        if log_every and step % log_every == 0:
            log.info("pretrain step %d loss %.4f", step, np.mean(losses[-log_every:]))
    model.eval()
    return losses


@dataclass
class DistillConfig:
    rounds: int = 5
    iters_per_round: int = 2000
    delta0: float = 1.0 / 512
    lr: float = 3e-4
    warmup: int = 100
    tau_init: float = 0.96
    tau_step: float = 0.03
    tau_floor: float = 0.05
    loss_variant: LossKind = LossKind.HYBRID
    batch: int = 32
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.loss_variant = LossKind(self.loss_variant)
        if self.loss_variant is LossKind.PRETRAIN_CE:
            raise ValueError("distillation variant must be hybrid, kl_fwd or kl_bwd")
        if not 0.0 < self.delta0 < 1.0:
            raise ValueError("delta0 must lie in (0, 1)")
        if self.rounds < 1 or self.delta0 * 2 ** (self.rounds - 1) >= 1.0:
            raise ValueError("final gap delta0 * 2^(rounds-1) must stay below 1")
        if self.iters_per_round < 0:
            raise ValueError("iters_per_round must be >= 0")

    def delta(self, rnd: int) -> float:
        """Time gap used in round ``rnd`` (1-based)."""
        return self.delta0 * 2.0 ** (rnd - 1)

    def tau(self, rnd: int) -> float:
        return max(self.tau_init - self.tau_step * (rnd - 1), self.tau_floor)


@dataclass
class TrainState:
    student: Denoiser
    teacher: Denoiser
    optimizer: torch.optim.Optimizer
    scheduler: object
    round: int = 0
    step: int = 0
    metrics: list = field(default_factory=list)

    @classmethod
    def from_teacher(cls, teacher: Denoiser, cfg: DistillConfig) -> "TrainState":
        student = copy.deepcopy(teacher)
        frozen = copy.deepcopy(teacher)
        for p in frozen.parameters():
            p.requires_grad_(False)
        opt, sched = make_optimizer(student, cfg.lr, cfg.warmup)
        return cls(student, frozen, opt, sched)


def hard_reset(state: TrainState) -> None:
    """Teacher snapshots the student (no gradient path)."""
    with torch.no_grad():
        for pt, ps in zip(state.teacher.parameters(), state.student.parameters()):
            pt.copy_(ps)


def mcd_round(state: TrainState, cfg: DistillConfig, stream, schedule: Schedule | None = None,
              rnd: int | None = None, check_teacher: bool = False) -> TrainState:
    """Run ``cfg.iters_per_round`` distillation iterations at the round's gap and temperature."""
    schedule = schedule or Schedule()
    rnd = state.round if rnd is None else rnd
    delta, tau = cfg.delta(rnd), cfg.tau(rnd)
    rng = substream(cfg.seed, "distill", rnd)
    mask_id = state.student.cfg.mask_id
    digest = param_digest(state.teacher) if check_teacher else None
    state.student.train()
    for j in range(cfg.iters_per_round):
        x0 = stream.sample(rng, cfg.batch)
        u = rng.random(x0.shape)
        t = 1.0 - (1.0 - delta) * rng.random(cfg.batch)  # t ~ U(delta, 1]
        s = t - delta
        z_t, z_s, m_t, m_s = coupled_pair(x0, u, gamma(schedule, t), gamma(schedule, s), mask_id)
        assert not np.any(m_s & ~m_t), "coupled pair lost nesting"
        with torch.no_grad():
            teacher_logits = state.teacher(z_s)
        try:
            parts = loss_mcd(state.student(z_t), teacher_logits, x0, m_t, m_s, tau, cfg.loss_variant)
        except NonFiniteLossError as exc:
            raise TrainingDiverged(f"round {rnd} iteration {j + 1}: {exc}", state.step + 1) from exc
        norm = _step(state.student, state.optimizer, state.scheduler, parts.total, cfg.grad_clip)
        state.step += 1
        if not math.isfinite(norm) or not state.student.all_finite():
            raise TrainingDiverged(f"round {rnd} iteration {j + 1}: non-finite parameters", state.step)
        state.metrics.append([rnd, state.step, delta, tau, float(parts.total.detach()), float(parts.kl.detach()),
                              float(parts.ce.detach()), norm])
        if digest is not None and param_digest(state.teacher) != digest:
            raise AssertionError("teacher parameters changed inside a round")
    state.student.eval()
    return state


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_metrics(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def run_distillation(teacher_ckpt, cfg: DistillConfig, stream, out_dir, schedule: Schedule | None = None,
                     expected=None, on_round=None) -> Path:
    """Full staged distillation; returns the final student checkpoint path.

    Writes ``student_r{n}.mcd`` after every round and ``metrics.csv``.  On a
    non-finite loss the metrics so far are written and the last good
    checkpoint is left in place before re-raising.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    teacher = load_checkpoint(teacher_ckpt, expected)
    state = TrainState.from_teacher(teacher, cfg)
    metrics_path = out / "metrics.csv"
    last = Path(teacher_ckpt)
    try:
        for rnd in range(1, cfg.rounds + 1):
            state.round = rnd
            hard_reset(state)
            mcd_round(state, cfg, stream, schedule, rnd)
            last = out / f"student_r{rnd}.mcd"
            save_checkpoint(state.student, last, {"round": rnd})
            log.info("round %d done, delta=%g tau=%g", rnd, cfg.delta(rnd), cfg.tau(rnd))
            if on_round is not None:
                on_round(rnd, last)
    finally:
        write_metrics(state.metrics, metrics_path)
    return last
