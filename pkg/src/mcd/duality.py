"""Latent Gaussian states, the masking projection, and Monte Carlo checks.

This is the only module that materialises the full K-dimensional noise.
Everything on the training path works with the per-token scalar ``u``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .rng import substream
from .schedule import CalibratedSchedule, Schedule, cdf_Y, latent_coefficients


class DiscreteOutcome(str, Enum):
    SIGNAL = "signal"
    MASK = "mask"


@dataclass(frozen=True)
class LatentState:
    w: np.ndarray
    signal_index: int

    def __post_init__(self):
        if self.w.ndim != 1 or self.w.size < 2:
            raise ValueError("latent vector must be 1-D with K >= 2 entries")
        if not 0 <= self.signal_index < self.mask_index:
            raise ValueError(f"signal index {self.signal_index} must lie in [0, {self.mask_index - 1}]")

    @property
    def K(self) -> int:
        return self.w.size

    @property
    def mask_index(self) -> int:
        return self.w.size - 1


@dataclass(frozen=True)
class TrajectorySeed:
    """Fixed noise draw for one token, with its margin ``Y`` and level ``u = F_Y(Y)``."""

    epsilon: np.ndarray
    signal_index: int
    derived_Y: float
    derived_u: float

    @classmethod
    def from_noise(cls, epsilon, signal_index: int, tol: float = 1e-10) -> "TrajectorySeed":
        eps = np.asarray(epsilon, dtype=np.float64)
        y = float(np.max(np.delete(eps, signal_index)) - eps[signal_index])
        return cls(eps, signal_index, y, float(cdf_Y(y, eps.size, tol)))


def make_latent(x0_index: int, epsilon, cal: CalibratedSchedule, t: float) -> LatentState:
    eps = np.asarray(epsilon, dtype=np.float64)
    if eps.shape != (cal.vocab_extended,):
        raise ValueError(f"epsilon has shape {eps.shape}, expected ({cal.vocab_extended},)")
    alpha, sigma = latent_coefficients(cal, t)
    w = sigma * eps
    w[x0_index] += alpha
    return LatentState(w, x0_index)


def project(state: LatentState) -> DiscreteOutcome:
    w, k = state.w, state.signal_index
    rival = np.max(np.delete(w, k))
    return DiscreteOutcome.SIGNAL if w[k] > rival else DiscreteOutcome.MASK


def project_many(w: np.ndarray, signal_index: np.ndarray) -> np.ndarray:
    """Row-wise projection of an ``(n, K)`` latent batch; True means signal."""
    rows = np.arange(w.shape[0])
    own = w[rows, signal_index]
    others = w.copy()
    others[rows, signal_index] = -np.inf
    return own > others.max(axis=1)


def locked_discrete_state(seed: TrajectorySeed, cal: CalibratedSchedule, t: float) -> DiscreteOutcome:
    return DiscreteOutcome.SIGNAL if cal.gamma(t) > seed.derived_u else DiscreteOutcome.MASK


def interior_grid(n: int) -> np.ndarray:
    """``n`` equally spaced times strictly inside (0, 1)."""
    return np.arange(1, n + 1, dtype=np.float64) / (n + 1)


@dataclass
class DualityRow:
    K: int
    t: float
    gamma: float
    ratio: float
    empirical: float
    std_err: float

    @property
    def z_score(self) -> float:
        if self.std_err == 0.0:
            return 0.0 if self.empirical == self.gamma else math.inf
        return (self.empirical - self.gamma) / self.std_err

    @property
    def within_3se(self) -> bool:
        return abs(self.empirical - self.gamma) <= 3.0 * self.std_err


@dataclass
class DualityReport:
    K: int
    n_samples: int
    rows: list[DualityRow] = field(default_factory=list)
    lock_trials: int = 0
    lock_disagreements: int = 0
    lock_max_boundary_gap: float = 0.0
    nesting_violations: int = 0
    switch_violations: int = 0
    cdf_tolerance: float = 1e-10

    @property
    def lock_agreement(self) -> float:
        return 1.0 - self.lock_disagreements / max(self.lock_trials, 1)

    @property
    def passed(self) -> bool:
        return (
            all(r.within_3se for r in self.rows)
            and self.lock_agreement >= 0.999
            and self.lock_max_boundary_gap <= self.cdf_tolerance
            and self.nesting_violations == 0
            and self.switch_violations == 0
        )

    def summary(self) -> dict:
        return {
            "K": self.K,
            "n_samples": self.n_samples,
            "max_abs_z": round(float(max((abs(r.z_score) for r in self.rows), default=0.0)), 6),
            "lock_trials": self.lock_trials,
            "lock_agreement": float(self.lock_agreement),
            "lock_max_boundary_gap": self.lock_max_boundary_gap,
            "nesting_violations": self.nesting_violations,
            "switch_violations": self.switch_violations,
            "passed": self.passed,
        }


REPORT_HEADER = ["K", "t", "gamma", "ratio", "empirical", "std_err", "z_score", "within_3se"]


def write_reports(reports: list[DualityReport], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for rep in reports:
            for r in rep.rows:
                writer.writerow([r.K, repr(r.t), repr(r.gamma), repr(r.ratio), repr(r.empirical),
                                 repr(r.std_err), f"{r.z_score:.6f}", int(r.within_3se)])
        for rep in reports:
            fh.write("# summary," + ",".join(f"{k}={v}" for k, v in rep.summary().items()) + "\n")


def _static_rates(K, n_samples, ratios_ab, gen, chunk):
    hits = np.zeros(len(ratios_ab), dtype=np.int64)
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        eps = gen.standard_normal((n, K))
        k = gen.integers(0, K - 1, size=n)
        rows = np.arange(n)
        own = eps[rows, k].copy()
        eps[rows, k] = -np.inf
        rival = eps.max(axis=1)
        # w_k = a + s*eps_k and w_j = s*eps_j, so the projection reduces to a + s*own > s*rival
        for i, (a, s) in enumerate(ratios_ab):
            hits[i] += np.count_nonzero(a + s * own > s * rival)
        done += n
    return hits


def verify_duality_report(
    K: int,
    schedule: Schedule,
    n_samples: int,
    t_grid: int,
    rng_seed: int,
    lock_trajectories: int = 10_000,
    lock_grid: int = 64,
    cdf_tolerance: float = 1e-10,
    chunk: int = 20_000,
) -> DualityReport:
    """Monte Carlo check of marginal calibration, scalar locking, and nesting."""
    if n_samples < 10_000:
        raise ValueError(f"n_samples must be >= 1e4, got {n_samples}")
    if t_grid < 1 or lock_grid < 1:
        raise ValueError("grids must be non-empty")
    cal = CalibratedSchedule(schedule, K, cdf_tolerance)
    report = DualityReport(K=K, n_samples=n_samples, cdf_tolerance=cdf_tolerance)

    ts = interior_grid(t_grid)
    coeffs = [latent_coefficients(cal, t) for t in ts]
    hits = _static_rates(K, n_samples, coeffs, substream(rng_seed, "static", K), chunk)
    for t, h in zip(ts, hits):
        g = cal.gamma(t)
        report.rows.append(DualityRow(K, float(t), g, cal.ratio(t), h / n_samples,
                                      math.sqrt(g * (1.0 - g) / n_samples)))

    _locking_checks(report, cal, lock_trajectories, lock_grid, substream(rng_seed, "lock", K))
    return report


def _locking_checks(report, cal, n_traj, n_grid, gen, chunk=2_000):
    K = cal.vocab_extended
    # endpoints added for the nesting scan: gamma(0)=1 forces signal, gamma(1)=0 forces mask
    inner = interior_grid(n_grid)
    ts = np.concatenate([[0.0], inner, [1.0]])
    full_gammas = cal.gamma(ts)
    gammas = full_gammas[1:-1]
    coeffs = [latent_coefficients(cal, t) for t in inner]
    worst_gap = 0.0
    done = 0
    while done < n_traj:
        n = min(chunk, n_traj - done)
        eps = gen.standard_normal((n, K))
        k = gen.integers(0, K - 1, size=n)
        rows = np.arange(n)
        masked = eps.copy()
        masked[rows, k] = -np.inf
        Y = masked.max(axis=1) - eps[rows, k]
        u = cdf_Y(Y, K, cal.cdf_tolerance)

        locked_full = full_gammas[None, :] > u[:, None]
        locked = locked_full[:, 1:-1]
        projected = np.empty_like(locked)
        for i, (a, s) in enumerate(coeffs):
            w = s * eps
            w[rows, k] += a
            projected[:, i] = project_many(w, k)
        diff = locked != projected
        report.lock_trials += diff.size
        report.lock_disagreements += int(diff.sum())
        if diff.any():
            gaps = np.abs(u[:, None] - gammas[None, :])[diff]
            worst_gap = max(worst_gap, float(gaps.max()))

        # full locked trajectory on [0, 1]; masked set must be an up-set in t
        flips = np.diff(locked_full.astype(np.int8), axis=1)
        report.nesting_violations += int(np.count_nonzero(flips > 0))
        report.switch_violations += int(np.count_nonzero((flips != 0).sum(axis=1) != 1))
        done += n
    report.lock_max_boundary_gap = worst_gap
