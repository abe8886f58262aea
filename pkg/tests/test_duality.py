import math

import numpy as np
import pytest

from mcd.duality import (
    DiscreteOutcome,
    LatentState,
    TrajectorySeed,
    interior_grid,
    locked_discrete_state,
    make_latent,
    project,
    project_many,
    verify_duality_report,
    write_reports,
)
from mcd.schedule import CalibratedSchedule, Schedule, cdf_Y
from scipy.special import ndtr


def cal(K):
    return CalibratedSchedule(Schedule(), K)


def test_zero_noise_latent_is_scaled_one_hot():
    c = cal(6)
    st = make_latent(2, np.zeros(6), c, 0.0)
    alpha, _ = c.coefficients(0.0)
    expected = np.zeros(6)
    expected[2] = alpha
    assert np.allclose(st.w, expected)
    assert project(st) is DiscreteOutcome.SIGNAL


def test_k2_unit_ratio_latent():
    # gamma = Phi(1/sqrt 2) gives ratio 1, so alpha = sigma = 1/sqrt 2
    st = make_latent(0, np.zeros(2), cal(2), 1.0 - ndtr(1 / math.sqrt(2)))
    assert np.allclose(st.w, [1 / math.sqrt(2), 0.0], atol=1e-6)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        make_latent(0, np.zeros(3), cal(4), 0.5)


def test_signal_index_cannot_be_mask():
    with pytest.raises(ValueError):
        LatentState(np.zeros(4), 3)


def test_project_simple_cases():
    assert project(LatentState(np.array([0.0, 1.0, 0.0, 0.0]), 1)) is DiscreteOutcome.SIGNAL
    assert project(LatentState(np.array([0.5, -2.0, 0.1, 0.3]), 1)) is DiscreteOutcome.MASK
    # ties resolve to mask
    assert project(LatentState(np.array([1.0, 1.0, 0.0]), 0)) is DiscreteOutcome.MASK


def test_project_many_matches_scalar_project():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((500, 7))
    k = rng.integers(0, 6, size=500)
    batch = project_many(w, k)
    single = [project(LatentState(w[i], int(k[i]))) is DiscreteOutcome.SIGNAL for i in range(500)]
    assert batch.tolist() == single


def test_latent_moments():
    c = cal(5)
    t, k, n = 0.4, 1, 1_000_000
    a, s = c.coefficients(t)
    rng = np.random.default_rng(3)
    eps = rng.standard_normal((n, 5))
    w = s * eps
    w[:, k] += a
    mean_se = s / math.sqrt(n)
    target = np.zeros(5)
    target[k] = a
    assert np.all(np.abs(w.mean(axis=0) - target) <= 4 * mean_se)
    cov = np.cov(w, rowvar=False)
    # var of a sample variance for a normal is 2 s^4 / (n - 1); off-diagonals have var s^4 / n
    assert np.all(np.abs(np.diag(cov) - s * s) <= 4 * math.sqrt(2 * s**4 / (n - 1)))
    off = cov[~np.eye(5, dtype=bool)]
    assert np.all(np.abs(off) <= 4 * s * s / math.sqrt(n))


@pytest.mark.parametrize("K", [2, 30])
def test_unmask_rate_at_calibrated_time(K):
    c = cal(K)
    t, n = 0.35, 1_000_000
    a, s = c.coefficients(t)
    rng = np.random.default_rng(K)
    eps = rng.standard_normal((n, K))
    k = rng.integers(0, K - 1, size=n)
    w = s * eps
    w[np.arange(n), k] += a
    rate = project_many(w, k).mean()
    g = c.gamma(t)
    assert abs(rate - g) <= 3 * math.sqrt(g * (1 - g) / n)


def test_locked_state_threshold():
    seed = TrajectorySeed(np.zeros(3), 0, 0.0, 0.3)
    c = cal(3)
    assert locked_discrete_state(seed, c, 0.25) is DiscreteOutcome.SIGNAL  # gamma 0.75
    assert locked_discrete_state(seed, c, 0.75) is DiscreteOutcome.MASK  # gamma 0.25


def test_seed_derivation():
    eps = np.array([0.3, -1.2, 0.8, 0.1])
    seed = TrajectorySeed.from_noise(eps, 1)
    assert seed.derived_Y == pytest.approx(0.8 + 1.2)
    assert abs(seed.derived_u - cdf_Y(2.0, 4)) <= 1e-10


def test_locking_agrees_with_projection_scalar_path():
    rng = np.random.default_rng(9)
    c = cal(12)
    ts = interior_grid(32)
    for _ in range(300):
        eps = rng.standard_normal(12)
        k = int(rng.integers(0, 11))
        seed = TrajectorySeed.from_noise(eps, k)
        for t in ts:
            locked = locked_discrete_state(seed, c, t)
            projected = project(make_latent(k, eps, c, t))
            if locked is not projected:
                assert abs(seed.derived_u - c.gamma(t)) <= c.cdf_tolerance


def test_single_switch_along_latent_path():
    rng = np.random.default_rng(4)
    c = cal(8)
    ts = np.linspace(0.0, 1.0, 1000)
    for _ in range(20):
        eps = rng.standard_normal(8)
        k = int(rng.integers(0, 7))
        states = [project(make_latent(k, eps, c, t)) is DiscreteOutcome.SIGNAL for t in ts]
        flips = np.count_nonzero(np.diff(np.array(states, int)))
        assert flips <= 1
        if states[0] and not states[-1]:
            assert flips == 1
            first_mask = ts[states.index(False)]
            u = TrajectorySeed.from_noise(eps, k).derived_u
            assert c.gamma(first_mask) <= u


def test_report_rejects_small_sample():
    with pytest.raises(ValueError):
        verify_duality_report(3, Schedule(), 0, 4, 1)


def test_report_is_deterministic_and_passes(tmp_path):
    kw = dict(K=5, schedule=Schedule(), n_samples=20_000, t_grid=4, rng_seed=1, lock_trajectories=500,
              lock_grid=16)
    a = verify_duality_report(**kw)
    b = verify_duality_report(**kw)
    write_reports([a], tmp_path / "a.csv")
    write_reports([b], tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert a.passed
    assert a.nesting_violations == 0 and a.switch_violations == 0
    text = (tmp_path / "a.csv").read_text().splitlines()
    assert text[0].startswith("K,t,gamma") and text[-1].startswith("# summary")
    assert len(text) == 1 + 4 + 1
