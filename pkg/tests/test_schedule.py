import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr, ndtri

from mcd.schedule import (
    CalibratedSchedule,
    DomainError,
    Schedule,
    ScheduleKind,
    calibration_table,
    cdf_Y,
    gamma,
    inv_cdf_Y,
    latent_coefficients,
)

TOL = 1e-10


def mp_cdf_Y(y, K):
    mp.mp.dps = 30
    f = lambda x: mp.npdf(x) * mp.ncdf(x + y) ** (K - 1)
    return float(mp.quad(f, [-14, -6, -3, -1, 0, 1, 3, 6, 14]))


def mc_margin(K, n, seed):
    """Draws of max_{j != k} eps_j - eps_k; the max of K-1 normals via its inverse CDF."""
    rng = np.random.default_rng(seed)
    top = ndtri(rng.random(n) ** (1.0 / (K - 1)))
    return top - rng.standard_normal(n)


@pytest.mark.parametrize("t,expected", [(0.0, 1.0), (1.0, 0.0), (0.25, 0.75)])
def test_linear_gamma_values(t, expected):
    assert gamma(Schedule(), t) == expected


def test_cosine_endpoints_and_monotone():
    s = Schedule(ScheduleKind.COSINE)
    ts = np.linspace(0, 1, 1001)
    g = gamma(s, ts)
    assert g[0] == 1.0 and g[-1] == 0.0
    assert np.all(np.diff(g) < 0)


@pytest.mark.parametrize("t", [-0.1, 1.0001, float("nan")])
def test_gamma_rejects_out_of_domain(t):
    with pytest.raises(DomainError):
        gamma(Schedule(), t)


def test_schedule_rejects_bad_t_min():
    with pytest.raises(DomainError):
        Schedule(t_min=0.7)


@pytest.mark.parametrize("K", [2, 3, 7, 30, 100, 1000, 2048])
def test_exchangeability_point(K):
    assert abs(cdf_Y(0.0, K) - 1.0 / K) <= TOL


def test_exchangeability_point_every_K():
    # Hermite rules alone drift to ~2e-10 near K = 1640
    worst = max(abs(cdf_Y(0.0, K) - 1.0 / K) for K in range(2, 2049))
    assert worst <= TOL


def test_k2_closed_form_value():
    assert cdf_Y(1.0, 2) == pytest.approx(0.760250, abs=5e-7)
    assert abs(cdf_Y(1.0, 2) - ndtr(1 / math.sqrt(2))) <= TOL


def test_k2_closed_form_grid():
    y = np.linspace(-8, 8, 1000)
    assert np.max(np.abs(cdf_Y(y, 2) - ndtr(y / math.sqrt(2)))) <= TOL


@pytest.mark.parametrize("K", [3, 30, 1000, 2048])
@pytest.mark.parametrize("y", [-6.0, -1.0, 0.7, 2.5, 5.0])
def test_cdf_matches_high_precision_quadrature(K, y):
    assert abs(cdf_Y(y, K) - mp_cdf_Y(y, K)) <= TOL


def test_cdf_matches_monte_carlo_k100():
    n = 10_000_000
    hits = np.count_nonzero(mc_margin(100, n, 7) < 2.0)
    p = hits / n
    se = math.sqrt(p * (1 - p) / n)
    assert abs(cdf_Y(2.0, 100) - p) <= 3 * se


def test_margin_sampler_matches_brute_force():
    # the inverse-CDF max trick used above agrees with explicit max over normals
    rng = np.random.default_rng(3)
    eps = rng.standard_normal((200_000, 100))
    brute = eps[:, 1:].max(axis=1) - eps[:, 0]
    fast = mc_margin(100, 200_000, 4)
    from scipy.stats import ks_2samp

    assert ks_2samp(brute, fast).pvalue > 0.01


def test_cdf_rejects_small_K():
    with pytest.raises(DomainError):
        cdf_Y(0.0, 1)


@pytest.mark.parametrize("K", [2, 3, 30, 1000])
def test_cdf_strictly_increasing_on_grid(K):
    y = np.linspace(-4, 6, 1000)
    assert np.all(np.diff(cdf_Y(y, K)) > 0)


def test_inverse_exchangeability_and_closed_form():
    for K in (2, 5, 100):
        assert abs(inv_cdf_Y(1.0 / K, K)) < 1e-8
    assert inv_cdf_Y(0.760250, 2) == pytest.approx(1.0, abs=1e-5)
    g = 0.3
    assert inv_cdf_Y(g, 2) == pytest.approx(math.sqrt(2) * ndtri(g), abs=1e-9)


def test_inverse_median_k3_cross_checked_by_monte_carlo():
    y = inv_cdf_Y(0.5, 3)
    assert abs(cdf_Y(y, 3) - 0.5) <= TOL
    n = 2_000_000
    frac = np.mean(mc_margin(3, n, 11) < y)
    assert abs(frac - 0.5) <= 3 * math.sqrt(0.25 / n)


@pytest.mark.parametrize("g", [0.0, 1.0])
def test_inverse_rejects_endpoints(g):
    with pytest.raises(DomainError):
        inv_cdf_Y(g, 3)


def test_round_trip_random_pairs():
    rng = np.random.default_rng(0)
    Ks = rng.choice([2, 3, 10, 1000], size=1000)
    gs = rng.uniform(1e-5, 1 - 1e-5, size=1000)
    worst = max(abs(cdf_Y(inv_cdf_Y(g, int(K)), int(K)) - g) for g, K in zip(gs, Ks))
    assert worst <= 10 * TOL


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-4, 1 - 1e-4), st.floats(1e-4, 1 - 1e-4), st.sampled_from([2, 3, 10, 300]))
def test_inverse_is_increasing(g1, g2, K):
    if g1 == g2:
        return
    lo, hi = sorted((g1, g2))
    assert inv_cdf_Y(lo, K) < inv_cdf_Y(hi, K)


def test_latent_coefficients_cases():
    cal = CalibratedSchedule(Schedule(), 2)
    a, s = latent_coefficients(cal, 1.0 - ndtr(1 / math.sqrt(2)))
    assert a == pytest.approx(1 / math.sqrt(2), abs=1e-6)
    assert s == pytest.approx(1 / math.sqrt(2), abs=1e-6)

    cal = CalibratedSchedule(Schedule(), 5)
    a, s = latent_coefficients(cal, 1.0 - 1.0 / 5)
    assert abs(a) < 1e-8 and s == pytest.approx(1.0)

    a, s = latent_coefficients(cal, 0.0)  # gamma clamped to 1 - 1e-6
    assert a > 0.98 and s < 0.2


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0), st.sampled_from([2, 28, 1000]), st.sampled_from(list(ScheduleKind)))
def test_vp_normalisation(t, K, kind):
    a, s = latent_coefficients(CalibratedSchedule(Schedule(kind), K), t)
    assert abs(a * a + s * s - 1.0) <= 1e-12


def test_ratio_strictly_decreasing():
    cal = CalibratedSchedule(Schedule(), 28)
    r = [cal.ratio(t) for t in np.linspace(0, 1, 101)]
    assert all(x > y for x, y in zip(r, r[1:]))


def test_calibration_table_rows():
    cal = CalibratedSchedule(Schedule(), 2)
    rows = calibration_table(cal, [0.5])
    t, g, r, a, s = rows[0]
    assert (t, g) == (0.5, 0.5)
    assert abs(r) < 1e-9 and a == pytest.approx(0.0, abs=1e-9) and s == pytest.approx(1.0)
