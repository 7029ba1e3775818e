import numpy as np
import pytest

from actionbridge import (
    NoiseSchedule,
    bridge_marginal,
    h_transform,
    precondition,
    sample_bridge,
    scaling,
    score_from_denoiser,
)
from actionbridge.errors import SingularTimeError


def _bridge_log_density(schedule, a_t, a0, aT, t):
    m = bridge_marginal(schedule, a0, aT, t)
    return -0.5 * np.sum((a_t - m.mean) ** 2) / m.std**2


@pytest.fixture
def ve():
    return NoiseSchedule(kind="VE")


def test_marginal_ve_midpoint(ve):
    m = bridge_marginal(ve, np.array([0.0]), np.array([1.0]), 0.5)
    assert m.mean[0] == pytest.approx(0.25)
    assert m.std**2 == pytest.approx(0.1875)


@pytest.mark.parametrize("kind", ["VE", "VP"])
def test_endpoint_pinning_exact(kind):
    sch = NoiseSchedule(kind=kind)
    rng = np.random.default_rng(0)
    for _ in range(20):
        a0 = rng.standard_normal(6)
        aT = rng.standard_normal(6)
        m = bridge_marginal(sch, a0, aT, sch.T)
        assert np.max(np.abs(m.mean - aT)) <= 1e-12 * max(1.0, np.max(np.abs(aT)))
        assert m.std == 0.0


def test_marginal_near_t_min_returns_a0(ve):
    a0, aT = np.array([2.0, -1.0]), np.array([-3.0, 4.0])
    m = bridge_marginal(ve, a0, aT, ve.t_min)
    assert np.allclose(m.mean, a0, atol=1e-5)
    assert m.std < 2e-3


def test_interpolation_weights_sum_to_one(ve):
    # For VE (alpha = 1) the mean is a convex combination of a0 and aT.
    rng = np.random.default_rng(1)
    for _ in range(100):
        t = rng.uniform(ve.t_min, ve.T)
        r = ve.snr_ratio(t)
        assert abs(r + (1.0 - r) - 1.0) < 1e-12
        assert 0.0 < r <= 1.0


def test_marginal_shape_mismatch(ve):
    with pytest.raises(ValueError):
        bridge_marginal(ve, np.zeros(3), np.zeros(4), 0.5)


def test_sample_bridge_at_T_and_determinism(ve):
    a0, aT = np.zeros(4), np.arange(4.0)
    s1 = sample_bridge(ve, a0, aT, ve.T, rng_seed=7)
    assert np.array_equal(s1, aT)
    x = sample_bridge(ve, a0, aT, 0.5, rng_seed=42)
    y = sample_bridge(ve, a0, aT, 0.5, rng_seed=42)
    assert np.array_equal(x, y)


def test_sample_bridge_monte_carlo_mean(ve):
    # Empirical mean over 1e5 draws of the 1-D midpoint case.
    draws = sample_bridge(ve, np.zeros(100_000), np.ones(100_000), 0.5, rng_seed=3)
    assert abs(draws.mean() - 0.25) < 0.01


def test_h_transform_values(ve):
    assert np.all(h_transform(ve, np.ones(3), np.ones(3), 0.5) == 0.0)
    h = h_transform(ve, np.array([0.0]), np.array([1.0]), 0.5)
    assert h[0] == pytest.approx(4.0 / 3.0)
    with pytest.raises(SingularTimeError):
        h_transform(ve, np.zeros(2), np.ones(2), ve.T)
    mags = [abs(h_transform(ve, np.array([0.0]), np.array([1.0]), t)[0])
            for t in (0.9, 0.99, 0.999)]
    assert mags[0] < mags[1] < mags[2]


def test_h_transform_matches_degenerate_score(ve):
    # For VE, substituting d_pred = a_t into the score collapses the marginal
    # so only the pinning term survives: score == h exactly.
    rng = np.random.default_rng(5)
    for _ in range(100):
        t = rng.uniform(ve.t_min, ve.T - 1e-3)
        a_t = rng.standard_normal(4)
        aT = rng.standard_normal(4)
        h = h_transform(ve, a_t, aT, t)
        s = score_from_denoiser(ve, a_t, t, aT, d_pred=a_t)
        assert np.max(np.abs(h - s)) < 1e-10


def test_scaling_boundaries(ve):
    s = scaling(ve, ve.t_min, 0.5, 0.5, 0.0)
    assert s.c_in == pytest.approx(2.0, abs=1e-4)
    assert s.c_skip == pytest.approx(1.0, abs=1e-4)
    assert s.c_out == pytest.approx(0.0, abs=2e-3)
    s = scaling(ve, ve.T, 0.5, 0.5, 0.0)
    assert s.c_in == pytest.approx(2.0)
    assert s.c_skip == pytest.approx(0.0, abs=1e-12)
    assert s.c_out == pytest.approx(0.5)


def test_scaling_weight_is_inverse_cout_squared(ve):
    rng = np.random.default_rng(8)
    for _ in range(50):
        t = rng.uniform(ve.t_min, ve.T)
        s = scaling(ve, t, 0.5, 0.5, 0.0)
        if s.c_out > 0:
            assert s.w * s.c_out**2 == pytest.approx(1.0)
        assert s.c_in > 0
        assert s.c_noise == pytest.approx(0.25 * np.log(t))


def test_precondition_forms():
    from actionbridge.bridge import ScalingSet

    def make(c_skip, c_out):
        return ScalingSet(c_in=np.float64(1.0), c_skip=np.float64(c_skip),
                          c_out=np.float64(c_out), c_noise=np.float64(0.0),
                          w=np.float64(1.0), sigma_data0=0.5, sigma_dataT=0.5,
                          sigma_cov0T=0.0)

    a_t = np.array([1.0, -2.0])
    raw = np.array([3.0, 5.0])
    assert np.array_equal(precondition(raw, a_t, make(1.0, 0.0)), a_t)
    assert np.array_equal(precondition(raw, a_t, make(0.0, 1.0)), raw)
    s = make(0.3, 0.7)
    lhs = precondition(2 * raw, a_t, s) - precondition(raw, a_t, s)
    assert np.allclose(lhs, 0.7 * raw)
    with pytest.raises(ValueError):
        precondition(np.zeros(3), a_t, s)


def test_score_zero_at_mean(ve):
    a0, aT = np.array([0.3, -0.7]), np.array([1.5, 2.0])
    t = 0.4
    m = bridge_marginal(ve, a0, aT, t)
    s = score_from_denoiser(ve, m.mean, t, aT, d_pred=a0)
    assert np.allclose(s, 0.0, atol=1e-12)
    with pytest.raises(SingularTimeError):
        score_from_denoiser(ve, m.mean, ve.T, aT, d_pred=a0)


@pytest.mark.parametrize("kind", ["VE", "VP"])
def test_score_matches_finite_difference(kind):
    # Central differences of the exact bridge log-density; the log-density is
    # quadratic so the FD error is pure roundoff.
    sch = NoiseSchedule(kind=kind)
    rng = np.random.default_rng(11)
    h = 1e-5
    for _ in range(100):
        t = rng.uniform(sch.t_min, sch.T - 1e-3)
        a0 = rng.standard_normal(3)
        aT = rng.standard_normal(3)
        a_t = sample_bridge(sch, a0, aT, t, rng)
        s = score_from_denoiser(sch, a_t, t, aT, d_pred=a0)
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            num = (_bridge_log_density(sch, a_t + e, a0, aT, t)
                   - _bridge_log_density(sch, a_t - e, a0, aT, t)) / (2 * h)
            assert abs(s[i] - num) <= 1e-6 * max(1.0, abs(num))


def test_score_inverse_variance_scaling(ve):
    # Doubling sigma_hat^2 halves the score at fixed (a_t - mu_hat): check by
    # comparing two times with known variances at the same displacement.
    a0, aT = np.zeros(1), np.zeros(1)
    t1, t2 = 0.3, 0.5
    v1 = ve.sigma(t1) ** 2 * (1 - ve.snr_ratio(t1))
    v2 = ve.sigma(t2) ** 2 * (1 - ve.snr_ratio(t2))
    disp = np.array([0.37])
    s1 = score_from_denoiser(ve, disp, t1, aT, d_pred=a0)
    s2 = score_from_denoiser(ve, disp, t2, aT, d_pred=a0)
    assert s1[0] * v1 == pytest.approx(s2[0] * v2)
