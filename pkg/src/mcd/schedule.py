"""Signal schedules and the latent SNR calibration.

A masked token survives to time ``t`` with probability ``gamma(t)``.  The
latent Gaussian picture keeps the ground-truth coordinate only while
``alpha/sigma > Y`` where ``Y = max_{j != k} eps_j - eps_k`` for iid standard
normals ``eps``.  Choosing ``alpha/sigma = F_Y^{-1}(gamma(t))`` makes the two
processes agree marginally.  ``F_Y`` has the one-dimensional form

    F_Y(y) = integral phi(x) * Phi(x + y)^(K - 1) dx

which is evaluated here by quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import log_ndtr, ndtr, ndtri

GAMMA_CLAMP = 1e-6
DEFAULT_CDF_TOL = 1e-10

_GH_ORDERS = (192, 256)
_GH_MAX_K = 64  # Hermite error grows past ~1e-14 beyond this
_GL_PANELS = 128
_GL_ORDER = 16
_GL_HALF_WIDTH = 12.0


class DomainError(ValueError):
    """Argument outside the mathematical domain of a schedule function."""


class ScheduleKind(str, Enum):
    LINEAR = "linear"
    COSINE = "cosine"


@dataclass(frozen=True)
class Schedule:
    kind: ScheduleKind = ScheduleKind.LINEAR
    t_min: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if not 0.0 < self.t_min < 0.5:
            raise DomainError(f"t_min must lie in (0, 0.5), got {self.t_min}")

    def __call__(self, t):
        return gamma(self, t)


def gamma(schedule: Schedule, t):
    """Probability that a token is still clean at time ``t``.

    Accepts scalars or arrays. ``gamma(0) == 1`` and ``gamma(1) == 0`` exactly.
    """
    arr = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"t must lie in [0, 1], got {t!r}")
    if schedule.kind is ScheduleKind.LINEAR:
        out = 1.0 - arr
    else:
        out = np.where(arr == 1.0, 0.0, np.cos(0.5 * np.pi * arr))
    return float(out) if out.ndim == 0 else out


def time_of_gamma(schedule: Schedule, g: float) -> float:
    """Inverse of :func:`gamma` on [0, 1]."""
    if not 0.0 <= g <= 1.0:
        raise DomainError(f"gamma must lie in [0, 1], got {g!r}")
    if schedule.kind is ScheduleKind.LINEAR:
        return 1.0 - g
    return 2.0 / math.pi * math.acos(g)


def std_normal_cdf(x):
    return ndtr(x)


def std_normal_ppf(p):
    return ndtri(p)


@lru_cache(maxsize=None)
def _hermite_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    # Physicists' nodes rescaled so that sum(w * f(x)) = E[f(Z)], Z ~ N(0, 1).
    x, w = np.polynomial.hermite.hermgauss(n)
    x = math.sqrt(2.0) * x
    w = w / math.sqrt(math.pi)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def _legendre_rule() -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(_GL_ORDER)
    edges = np.linspace(-_GL_HALF_WIDTH, _GL_HALF_WIDTH, _GL_PANELS + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x).ravel()
    weights = (half[:, None] * w).ravel() * np.exp(-0.5 * nodes**2) / math.sqrt(2.0 * math.pi)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def _expect_phi_pow(y: np.ndarray, K: int, nodes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # sum_i w_i * Phi(x_i + y)^(K-1), chunked to bound memory
    out = np.empty(y.shape, dtype=np.float64)
    step = max(1, 4_000_000 // nodes.size)
    for lo in range(0, y.size, step):
        yy = y[lo:lo + step, None]
        out[lo:lo + step] = np.exp((K - 1) * log_ndtr(nodes + yy)) @ weights
    return out


def cdf_Y(y, K: int, tol: float = DEFAULT_CDF_TOL):
    """CDF of ``max_{j != k} eps_j - eps_k`` over ``K`` iid standard normals.

    Gauss-Hermite at two orders for small ``K``; points where the orders
    disagree by more than ``tol / 4``, and every point once ``K`` exceeds
    ``_GH_MAX_K``, use a composite Gauss-Legendre rule on [-12, 12].
    """
    if int(K) != K or K < 2:
        raise DomainError(f"K must be an integer >= 2, got {K}")
    K = int(K)
    arr = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError("y must be finite")
    flat = arr.ravel()
    if K > _GH_MAX_K:
        # Phi^(K-1) is close to a step here; Hermite nodes are too sparse near it
        out = np.clip(_expect_phi_pow(flat, K, *_legendre_rule()), 0.0, 1.0).reshape(arr.shape)
        return float(out) if out.ndim == 0 else out
    lo_rule, hi_rule = (_hermite_rule(n) for n in _GH_ORDERS)
    coarse = _expect_phi_pow(flat, K, *lo_rule)
    out = _expect_phi_pow(flat, K, *hi_rule)
    bad = np.abs(out - coarse) > 0.25 * tol
    if np.any(bad):
        out[bad] = _expect_phi_pow(flat[bad], K, *_legendre_rule())
    out = np.clip(out, 0.0, 1.0).reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


def inv_cdf_Y(g: float, K: int, tol: float = DEFAULT_CDF_TOL) -> float:
    """Solve ``cdf_Y(y, K) = g`` by a bracketed Brent search."""
    if not 0.0 < g < 1.0:
        raise DomainError(f"gamma must lie strictly inside (0, 1), got {g}")
    if K < 2:
        raise DomainError(f"K must be >= 2, got {K}")

    def f(y):
        return cdf_Y(y, K, tol) - g

    lo, hi = -1.0, 1.0
    while f(lo) > 0.0:
        lo *= 2.0
        if lo < -64.0:
            raise DomainError(f"no lower bracket for gamma={g}, K={K}")
    while f(hi) < 0.0:
        hi *= 2.0
        if hi > 64.0:
            raise DomainError(f"no upper bracket for gamma={g}, K={K}")
    return float(brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200))


def clamp_gamma(g: float) -> float:
    return min(max(g, GAMMA_CLAMP), 1.0 - GAMMA_CLAMP)


@dataclass(frozen=True)
class CalibratedSchedule:
    """Schedule plus the latent ratio ``alpha/sigma`` that reproduces it."""

    schedule: Schedule
    vocab_extended: int
    cdf_tolerance: float = DEFAULT_CDF_TOL

    def __post_init__(self):
        if self.vocab_extended < 2:
            raise DomainError("vocab_extended must be >= 2")

    def gamma(self, t):
        return gamma(self.schedule, t)

    def ratio(self, t: float) -> float:
        return _ratio(self.vocab_extended, clamp_gamma(self.gamma(t)), self.cdf_tolerance)

    def coefficients(self, t: float) -> tuple[float, float]:
        return latent_coefficients(self, t)


@lru_cache(maxsize=65536)
def _ratio(K: int, g: float, tol: float) -> float:
    return inv_cdf_Y(g, K, tol)


def latent_coefficients(cal: CalibratedSchedule, t: float) -> tuple[float, float]:
    """Variance-preserving ``(alpha, sigma)`` with ``alpha / sigma = ratio(t)``."""
    r = cal.ratio(t)
    norm = math.hypot(1.0, r)
    return r / norm, 1.0 / norm


def calibration_table(cal: CalibratedSchedule, ts) -> list[tuple[float, float, float, float, float]]:
    rows = []
    for t in ts:
        t = float(t)
        a, s = latent_coefficients(cal, t)
        rows.append((t, cal.gamma(t), cal.ratio(t), a, s))
    return rows
