"""Absorbing-mask corruption on token arrays.

All functions work on integer arrays of shape ``(L,)`` or ``(B, L)``.  A
noise level may be a scalar or one value per row.  The mask id is the last
id of the extended vocabulary, ``K - 1``.
"""

from __future__ import annotations

import numpy as np


def _per_row(gamma, x0: np.ndarray) -> np.ndarray:
    g = np.asarray(gamma, dtype=np.float64)
    if g.ndim == 0:
        return g
    if x0.ndim != 2 or g.shape != (x0.shape[0],):
        raise ValueError(f"per-row gamma of shape {g.shape} does not match tokens {x0.shape}")
    return g[:, None]


def _check_gamma(g: np.ndarray) -> None:
    if np.any(g < 0.0) or np.any(g > 1.0) or np.any(~np.isfinite(g)):
        raise ValueError("gamma must lie in [0, 1]")


def sample_lock_noise(shape, rng: np.random.Generator) -> np.ndarray:
    """Uniform thresholds in [0, 1), one per token position."""
    return rng.random(shape)


def mask_locked(x0: np.ndarray, u: np.ndarray, gamma_t, mask_id: int):
    """Deterministic masking: position ``i`` is masked iff ``u[i] > gamma_t``.

    Returns ``(z_t, m_t)`` with ``m_t`` a boolean mask indicator.
    """
    x0 = np.asarray(x0)
    u = np.asarray(u)
    if u.shape != x0.shape:
        raise ValueError(f"noise shape {u.shape} does not match tokens {x0.shape}")
    g = _per_row(gamma_t, x0)
    _check_gamma(g)
    m = u > g
    return np.where(m, mask_id, x0), m


def coupled_pair(x0: np.ndarray, u: np.ndarray, gamma_t, gamma_s, mask_id: int):
    """Student view at ``t`` and teacher view at ``s < t`` from one shared ``u``."""
    gt = np.asarray(gamma_t, dtype=np.float64)
    gs = np.asarray(gamma_s, dtype=np.float64)
    if np.any(gs < gt):
        raise ValueError("coupled pair needs gamma_s >= gamma_t (s earlier than t)")
    z_t, m_t = mask_locked(x0, u, gt, mask_id)
    z_s, m_s = mask_locked(x0, u, gs, mask_id)
    return z_t, z_s, m_t, m_s


def forward_sample(x0: np.ndarray, gamma_t, rng: np.random.Generator, mask_id: int) -> np.ndarray:
    """Independent masking with probability ``1 - gamma_t`` per position."""
    x0 = np.asarray(x0)
    g = _per_row(gamma_t, x0)
    _check_gamma(g)
    keep = rng.random(x0.shape) < g
    return np.where(keep, x0, mask_id)
