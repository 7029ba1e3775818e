"""Closed-form bridge math: pinned marginals, h-transform, score, and the
scaling/weighting functions used to precondition the denoising network.

The process is pinned at a_T.  Its marginal given both endpoints is Gaussian,

    q(a_t | a_0, a_T) = N(mu_hat_t, sigma_hat_t^2 I)
    mu_hat_t = r_t (alpha_t/alpha_T) a_T + alpha_t a_0 (1 - r_t)
    sigma_hat_t^2 = sigma_t^2 (1 - r_t),        r_t = SNR_T / SNR_t,

and the score is recovered from a denoiser prediction by substituting it for
a_0 in mu_hat.  The sign is fixed so the result equals grad log q (the
Gaussian score), which is what makes the reverse dynamics contract onto data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularTimeError
from .schedule import NoiseSchedule

# t within this distance of T counts as the singular endpoint.
_SINGULAR_TOL = 1e-12


@dataclass(frozen=True)
class BridgeMarginal:
    mean: np.ndarray
    std: float | np.ndarray


@dataclass(frozen=True)
class ScalingSet:
    """Input/output/skip scalings, loss weight, and time embedding at one or
    more times, plus the data moments they were derived from."""

    c_in: np.ndarray
    c_skip: np.ndarray
    c_out: np.ndarray
    c_noise: np.ndarray
    w: np.ndarray
    sigma_data0: float
    sigma_dataT: float
    sigma_cov0T: float


def _check_shapes(a0, aT):
    a0 = np.asarray(a0, dtype=float)
    aT = np.asarray(aT, dtype=float)
    if a0.shape != aT.shape:
        raise ValueError(f"endpoint shape mismatch: {a0.shape} vs {aT.shape}")
    return a0, aT


def bridge_marginal(schedule: NoiseSchedule, a0, aT, t) -> BridgeMarginal:
    """Gaussian marginal of the pinned process at time t.

    At t = T the ratio r_t is exactly 1, so mean = aT and std = 0.
    """
    a0, aT = _check_shapes(a0, aT)
    t = schedule.check_time(t)
    r = schedule.snr_ratio(t)
    alpha_t = schedule.alpha(t)
    alpha_T = schedule.alpha(schedule.T)
    mean = r * (alpha_t / alpha_T) * aT + alpha_t * a0 * (1.0 - r)
    var = schedule.sigma(t) ** 2 * (1.0 - r)
    # Guard tiny negative rounding at t ~ T.
    std = np.sqrt(np.maximum(var, 0.0))
    return BridgeMarginal(mean=mean, std=std)


def sample_bridge(schedule: NoiseSchedule, a0, aT, t, rng_seed) -> np.ndarray:
    """Draw a_t ~ q(a_t | a_0, a_T); deterministic for a fixed seed."""
    m = bridge_marginal(schedule, a0, aT, t)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return m.mean + m.std * rng.standard_normal(np.shape(m.mean))


def h_transform(schedule: NoiseSchedule, a_t, aT, t) -> np.ndarray:
    """Drift correction grad log p(a_T | a_t) pinning the process at a_T.

    VE: (a_T - a_t) / (sigma_T^2 - sigma_t^2)
    VP: (alpha_t/alpha_T a_T - a_t) / (sigma_t^2 (SNR_t/SNR_T - 1))
    """
    a_t, aT = _check_shapes(a_t, aT)
    t = schedule.check_time(t)
    if np.any(t >= schedule.T - _SINGULAR_TOL):
        raise SingularTimeError("h-transform is singular at t = T")
    if schedule.kind == "VE":
        return (aT - a_t) / (schedule.T**2 - t**2)
    alpha_t = schedule.alpha(t)
    alpha_T = schedule.alpha(schedule.T)
    denom = schedule.sigma(t) ** 2 * (schedule.snr(t) / schedule.snr(schedule.T) - 1.0)
    return (alpha_t / alpha_T * aT - a_t) / denom


def scaling(schedule: NoiseSchedule, t, sigma_data0, sigma_dataT, sigma_cov0T) -> ScalingSet:
    """Scaling and weighting functions at time t (scalar or array).

    With a_t = (alpha_t/alpha_T) r_t, b_t = alpha_t (1 - r_t),
    c_t = sigma_t^2 (1 - r_t):

        c_in   = 1 / sqrt(a_t^2 s_T^2 + b_t^2 s_0^2 + 2 a_t b_t s_0T + c_t)
        c_skip = (b_t s_0^2 + a_t s_0T) c_in^2
        c_out  = sqrt(a_t^2 (s_T^2 s_0^2 - s_0T^2) + s_0^2 c_t) * c_in
        w      = 1 / c_out^2
        c_noise= 1/4 log t

    where s_0, s_T are the data standard deviations at the two ends and s_0T
    their covariance.
    """
    if min(sigma_data0, sigma_dataT) < 0:
        raise ValueError("data moments must be non-negative")
    t = schedule.check_time(t)
    r = schedule.snr_ratio(t)
    alpha_t = schedule.alpha(t)
    alpha_T = schedule.alpha(schedule.T)
    a_t = (alpha_t / alpha_T) * r
    b_t = alpha_t * (1.0 - r)
    c_t = schedule.sigma(t) ** 2 * (1.0 - r)

    s0sq = sigma_data0**2
    sTsq = sigma_dataT**2
    denom_sq = a_t**2 * sTsq + b_t**2 * s0sq + 2.0 * a_t * b_t * sigma_cov0T + c_t
    if np.any(denom_sq <= 0.0):
        raise ValueError("c_in denominator vanished; invalid moments/schedule combination")
    c_in = 1.0 / np.sqrt(denom_sq)
    c_skip = (b_t * s0sq + a_t * sigma_cov0T) * c_in**2
    c_out = np.sqrt(np.maximum(a_t**2 * (sTsq * s0sq - sigma_cov0T**2) + s0sq * c_t, 0.0)) * c_in
    with np.errstate(divide="ignore"):
        w = np.where(c_out > 0.0, 1.0 / np.where(c_out > 0.0, c_out, 1.0) ** 2, np.inf)
    c_noise = 0.25 * np.log(t)
    return ScalingSet(
        c_in=c_in,
        c_skip=c_skip,
        c_out=c_out,
        c_noise=c_noise,
        w=w,
        sigma_data0=sigma_data0,
        sigma_dataT=sigma_dataT,
        sigma_cov0T=sigma_cov0T,
    )


def precondition(raw_output, a_t, s: ScalingSet) -> np.ndarray:
    """Denoiser output D = c_skip a_t + c_out raw; raw must have been produced
    from the scaled input c_in a_t with time embedding c_noise."""
    raw_output = np.asarray(raw_output, dtype=float)
    a_t = np.asarray(a_t, dtype=float)
    if raw_output.shape != a_t.shape:
        raise ValueError(f"shape mismatch: {raw_output.shape} vs {a_t.shape}")
    c_skip = np.expand_dims(s.c_skip, -1) if np.ndim(s.c_skip) == a_t.ndim - 1 else s.c_skip
    c_out = np.expand_dims(s.c_out, -1) if np.ndim(s.c_out) == a_t.ndim - 1 else s.c_out
    return c_skip * a_t + c_out * raw_output


def score_from_denoiser(schedule: NoiseSchedule, a_t, t, aT, d_pred) -> np.ndarray:
    """Score grad log q(a_t | a_T) with d_pred substituted for a_0 in the
    bridge marginal: -(a_t - mu_hat)/sigma_hat^2."""
    t = schedule.check_time(t)
    if np.any(t >= schedule.T - _SINGULAR_TOL):
        raise SingularTimeError("score is singular at t = T")
    m = bridge_marginal(schedule, d_pred, aT, t)
    a_t = np.asarray(a_t, dtype=float)
    return -(a_t - m.mean) / m.std**2
