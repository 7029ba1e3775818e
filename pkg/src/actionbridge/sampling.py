"""Reverse-time generation: Euler-Maruyama for the reverse SDE, Heun for the
probability-flow ODE, and a discrete-time ancestral baseline sampler.

Both bridge samplers integrate from T - eps down to t_min on a uniform time
grid; the eps guard keeps the h-transform away from its singularity at T.

    SDE:  da = [f - g^2 (s - h)] dt + g dW
    ODE:  da/dt = f - g^2 (1/2 s - h)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bridge import h_transform, precondition, scaling, score_from_denoiser
from .denoiser import Denoiser
from .errors import DivergenceError
from .schedule import NoiseSchedule


def time_grid(k, t_min, T, eps=1e-3, policy="uniform"):
    """Strictly decreasing grid of k+1 nodes from T - eps down to t_min.

    policy "uniform" spaces nodes evenly in t (the default); "log" spaces them
    evenly in log t, which keeps the per-step contraction rate of the score
    term bounded near t_min and is the samplers' default.
    """
    if k < 1:
        raise ValueError(f"need k >= 1, got {k}")
    if not t_min < T - eps:
        raise ValueError(f"need t_min < T - eps, got t_min={t_min}, T={T}, eps={eps}")
    if policy == "uniform":
        return np.linspace(T - eps, t_min, k + 1)
    if policy == "log":
        return np.exp(np.linspace(np.log(T - eps), np.log(t_min), k + 1))
    raise ValueError(f"unknown grid policy {policy!r}")


def make_denoise_fn(denoiser: Denoiser, params, schedule: NoiseSchedule, moments, context):
    """Wrap network parameters into d(a_t, t) -> preconditioned prediction.

    moments: (sigma_data0, sigma_dataT, sigma_cov0T).
    """
    s0, sT, s0T = moments

    def denoise(a_t, t):
        s = scaling(schedule, t, s0, sT, s0T)
        raw = denoiser.forward(params, s.c_in * np.asarray(a_t, dtype=float), s.c_noise, context)
        return precondition(raw, a_t, s)

    return denoise


def sde_step(state, t_from, t_to, denoise_fn, schedule: NoiseSchedule, aT, rng):
    """One Euler-Maruyama step of the reverse bridge SDE from t_from down to t_to."""
    if not t_to < t_from:
        raise ValueError("sde_step requires t_to < t_from")
    state = np.asarray(state, dtype=float)
    d_pred = denoise_fn(state, t_from)
    s = score_from_denoiser(schedule, state, t_from, aT, d_pred)
    h = h_transform(schedule, state, aT, t_from)
    f, g2 = schedule.drift_diffusion(state, t_from)
    dt = t_to - t_from
    drift = f - g2 * (s - h)
    noise = rng.standard_normal(state.shape)
    return state + drift * dt + np.sqrt(g2) * np.sqrt(abs(dt)) * noise


def heun_step(field, state, t_from, t_to):
    """One explicit Heun (predictor-corrector, 2nd order) step of da/dt = field(a, t)."""
    dt = t_to - t_from
    v1 = field(state, t_from)
    pred = state + v1 * dt
    v2 = field(pred, t_to)
    return state + 0.5 * (v1 + v2) * dt


def probability_flow_field(denoise_fn, schedule: NoiseSchedule, aT):
    """Vector field f - g^2 (1/2 s - h) of the probability-flow ODE."""

    def field(a, t):
        d_pred = denoise_fn(a, t)
        s = score_from_denoiser(schedule, a, t, aT, d_pred)
        h = h_transform(schedule, a, aT, t)
        f, g2 = schedule.drift_diffusion(a, t)
        return f - g2 * (0.5 * s - h)

    return field


def ode_step(state, t_from, t_to, denoise_fn, schedule: NoiseSchedule, aT):
    """One Heun step of the probability-flow ODE; noise-free and deterministic."""
    if not t_to < t_from:
        raise ValueError("ode_step requires t_to < t_from")
    state = np.asarray(state, dtype=float)
    return heun_step(probability_flow_field(denoise_fn, schedule, aT), state, t_from, t_to)


def sample_with_fn(denoise_fn, schedule: NoiseSchedule, aT, k=10, mode="sde",
                   rng_seed=0, eps=1e-3, grid_policy="log"):
    """Iterate the chosen step over the time grid starting from aT.

    Returns (final_state, trace) where trace stacks the k+1 visited states,
    trace[0] being the prior sample itself.
    """
    if mode not in ("sde", "ode"):
        raise ValueError(f"mode must be 'sde' or 'ode', got {mode!r}")
    grid = time_grid(k, schedule.t_min, schedule.T, eps, policy=grid_policy)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    state = np.array(aT, dtype=float)
    trace = [state.copy()]
    for i in range(k):
        if mode == "sde":
            state = sde_step(state, grid[i], grid[i + 1], denoise_fn, schedule, aT, rng)
        else:
            state = ode_step(state, grid[i], grid[i + 1], denoise_fn, schedule, aT)
        if not np.all(np.isfinite(state)):
            raise DivergenceError(
                f"non-finite state at step {i + 1}/{k} (t={grid[i + 1]:.6g}, mode={mode})"
            )
        trace.append(state.copy())
    return state, np.stack(trace)


def sample(denoiser: Denoiser, params, schedule: NoiseSchedule, moments, aT, context,
           k=10, mode="sde", rng_seed=0, eps=1e-3, grid_policy="log"):
    """Generate an action sequence from the prior sample aT with a trained
    (or oracle) denoiser; see sample_with_fn for the return convention."""
    fn = make_denoise_fn(denoiser, params, schedule, moments, context)
    return sample_with_fn(fn, schedule, aT, k=k, mode=mode, rng_seed=rng_seed, eps=eps,
                          grid_policy=grid_policy)


@dataclass(frozen=True)
class DdpmSchedule:
    """Discrete linear-beta schedule for the vanilla-diffusion baseline."""

    n_timesteps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def tables(self):
        betas = np.linspace(self.beta_start, self.beta_end, self.n_timesteps)
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        return betas, alphas, alpha_bars

    def time_input(self, idx):
        """Scalar conditioning input for discrete step idx (0-based)."""
        return 0.25 * np.log((np.asarray(idx, dtype=float) + 1.0) / self.n_timesteps)


def ddpm_loss_and_grads(denoiser: Denoiser, params, dd: DdpmSchedule, x0, context, rng):
    """Noise-prediction MSE on a random batch of discrete timesteps."""
    x0 = np.asarray(x0, dtype=float)
    n = x0.shape[0]
    _, _, abars = dd.tables()
    idx = rng.integers(0, dd.n_timesteps, size=n)
    eps = rng.standard_normal(x0.shape)
    ab = abars[idx][:, None]
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    pred, cache = denoiser.forward_cached(params, x_t, dd.time_input(idx), context)
    resid = pred - eps
    loss = float(np.mean(np.sum(resid**2, axis=1)))
    grads, _, _ = denoiser.backward(params, cache, 2.0 * resid / n)
    return loss, grads


def ddpm_baseline_sample(denoiser: Denoiser, params, dd: DdpmSchedule, k, rng_seed,
                         context, dim, n_samples=1):
    """Ancestral sampling from N(0, I) over k strided timesteps.

    k = n_timesteps gives the full chain.  Deterministic for a fixed seed.
    """
    if not 1 <= k <= dd.n_timesteps:
        raise ValueError(f"k must lie in [1, {dd.n_timesteps}]")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    _, _, abars = dd.tables()
    steps = np.unique(np.linspace(0, dd.n_timesteps - 1, k).round().astype(int))[::-1]
    x = rng.standard_normal((n_samples, dim))
    for pos, i in enumerate(steps):
        prev = steps[pos + 1] if pos + 1 < len(steps) else -1
        ab_i = abars[i]
        ab_prev = abars[prev] if prev >= 0 else 1.0
        eps_hat = denoiser.forward(params, x, float(dd.time_input(i)), context)
        x0_hat = (x - np.sqrt(1.0 - ab_i) * eps_hat) / np.sqrt(ab_i)
        if prev < 0:
            x = x0_hat
            break
        beta_eff = 1.0 - ab_i / ab_prev
        mean = (
            np.sqrt(ab_prev) * beta_eff / (1.0 - ab_i) * x0_hat
            + np.sqrt(ab_i / ab_prev) * (1.0 - ab_prev) / (1.0 - ab_i) * x
        )
        var = (1.0 - ab_prev) / (1.0 - ab_i) * beta_eff
        x = mean + np.sqrt(max(var, 0.0)) * rng.standard_normal(x.shape)
    if not np.all(np.isfinite(x)):
        raise DivergenceError("non-finite state in baseline ancestral sampling")
    return x
