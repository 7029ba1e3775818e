import numpy as np
import pytest

from actionbridge import NoiseSchedule
from actionbridge.errors import ConfigError, ScheduleDomainError


def test_ve_snr_values():
    sch = NoiseSchedule(kind="VE")
    assert sch.snr(0.5) == pytest.approx(4.0)
    assert sch.snr(1.0) == pytest.approx(1.0)


@pytest.mark.parametrize("kind", ["VE", "VP"])
def test_snr_strictly_decreasing(kind):
    sch = NoiseSchedule(kind=kind)
    ts = np.linspace(sch.t_min, sch.T, 1000)
    snr = sch.snr(ts)
    assert np.all(np.diff(snr) < 0)


@pytest.mark.parametrize("kind", ["VE", "VP"])
def test_sigma_increasing_positive(kind):
    sch = NoiseSchedule(kind=kind)
    ts = np.linspace(sch.t_min, sch.T, 500)
    sig = sch.sigma(ts)
    assert np.all(sig > 0)
    assert np.all(np.diff(sig) > 0)


def test_vp_alpha_in_unit_interval_decreasing():
    sch = NoiseSchedule(kind="VP")
    ts = np.linspace(sch.t_min, sch.T, 500)
    al = sch.alpha(ts)
    assert np.all(al > 0) and np.all(al <= 1)
    assert np.all(np.diff(al) < 0)


def test_domain_errors():
    sch = NoiseSchedule()
    with pytest.raises(ScheduleDomainError):
        sch.snr(sch.T + 0.1)
    with pytest.raises(ScheduleDomainError):
        sch.snr(sch.t_min / 2)


def test_ve_drift_diffusion():
    sch = NoiseSchedule(kind="VE")
    a = np.array([1.0, -2.0, 3.0])
    f, g2 = sch.drift_diffusion(a, 0.5)
    assert np.all(f == 0.0)
    assert g2 == pytest.approx(1.0)  # d sigma^2/dt = 2t at t = 0.5
    for t in (0.1, 0.9):
        f, _ = sch.drift_diffusion(np.random.default_rng(0).standard_normal(4), t)
        assert np.all(f == 0.0)


def test_vp_g2_matches_finite_difference_of_sigma2():
    # g^2 = d sigma^2/dt - 2 (d log alpha/dt) sigma^2; both derivatives checked
    # against central differences of the closed forms.
    sch = NoiseSchedule(kind="VP")
    h = 1e-6
    for t in np.linspace(0.05, 0.95, 7):
        dsig2 = (sch.sigma(t + h) ** 2 - sch.sigma(t - h) ** 2) / (2 * h)
        dloga = (np.log(sch.alpha(t + h)) - np.log(sch.alpha(t - h))) / (2 * h)
        expected = dsig2 - 2 * dloga * sch.sigma(t) ** 2
        _, g2 = sch.drift_diffusion(np.zeros(2), t)
        assert g2 == pytest.approx(expected, rel=1e-5)
        f, _ = sch.drift_diffusion(np.ones(2), t)
        assert f[0] == pytest.approx(dloga, rel=1e-5)


def test_invalid_configs_rejected():
    with pytest.raises(ConfigError):
        NoiseSchedule(kind="bogus")
    with pytest.raises(ConfigError):
        NoiseSchedule(t_min=0.0)
    with pytest.raises(ConfigError):
        NoiseSchedule(kind="VP", beta_min=-1.0)
