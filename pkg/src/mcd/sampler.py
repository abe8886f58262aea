"""Ancestral reverse sampling for masked diffusion at any step count."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .denoiser import predict_proba
from .rng import substream
from .schedule import Schedule, gamma


class SamplerStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    steps: int
    schedule: Schedule = field(default_factory=Schedule)
    seed: int = 0
    batch: int = 256

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")

    def time_grid(self) -> np.ndarray:
        return 1.0 - np.arange(self.steps + 1, dtype=np.float64) / self.steps


def _categorical(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    idx = (u[..., None] * cdf[..., -1:] >= cdf).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def reverse_step(model, z_t: np.ndarray, gamma_t: float, gamma_s: float, rng, mask_id: int,
                 draws: np.ndarray | None = None) -> np.ndarray:
    """One step from ``t`` to ``s < t``.

    Each masked position unmasks with probability
    ``(gamma_s - gamma_t) / (1 - gamma_t)``, taking a token drawn from the
    model's prediction; visible positions are copied.  ``draws`` (shape
    ``z_t.shape + (2,)``) may supply the uniforms instead of ``rng``.
    """
    if gamma_s < gamma_t:
        raise ValueError("reverse step needs gamma_s >= gamma_t")
    z_t = np.asarray(z_t)
    masked = z_t == mask_id
    if not masked.any():
        return z_t.copy()
    if gamma_t >= 1.0:
        raise SamplerStateError("masked tokens present at gamma_t = 1")
    p_unmask = (gamma_s - gamma_t) / (1.0 - gamma_t)
    if draws is None:
        draws = rng.random(z_t.shape + (2,))
    reveal = masked & (draws[..., 0] < p_unmask)
    z_s = z_t.copy()
    if not reveal.any():
        return z_s
    probs = predict_proba(model, z_t)
    tokens = _categorical(probs, draws[..., 1])
    z_s[reveal] = tokens[reveal]
    return z_s


def generate(model, cfg: SamplerConfig, count: int, length: int, mask_id: int) -> np.ndarray:
    """Sample ``count`` sequences from all-mask using ``cfg.steps`` reverse steps.

    Uniforms for step ``i`` come from the substream ``(seed, "sample", i)``
    and are drawn for the whole set at once, so results do not depend on
    ``cfg.batch``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    z = np.full((count, length), mask_id, dtype=np.int64)
    grid = gamma(cfg.schedule, cfg.time_grid())
    for i in range(cfg.steps):
        g_t, g_s = float(grid[i]), float(grid[i + 1])
        draws = substream(cfg.seed, "sample", i).random((count, length, 2))
        for lo in range(0, count, cfg.batch):
            sl = slice(lo, lo + cfg.batch)
            z[sl] = reverse_step(model, z[sl], g_t, g_s, None, mask_id, draws=draws[sl])
    if (z == mask_id).any():
        raise SamplerStateError("mask tokens left after the final step")
    return z
