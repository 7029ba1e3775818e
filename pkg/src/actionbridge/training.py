"""Training: the weighted denoising-bridge objective, prior-head losses, and
a deterministic Adam loop.

The bridge loss is the weighted MSE

    L_b = E[ w(t) || a_0 - D(a_t, t) ||^2 ],    w(t) = 1 / c_out(t)^2,

with t uniform on [t_min, T - eps], a_T drawn from the configured prior
policy, and a_t from the pinned-process marginal.  Every random draw is
derived from (seed, stream, step) so runs are reproducible and independent of
batch-assembly order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bridge import bridge_marginal, scaling
from .denoiser import Denoiser
from .errors import ConfigError, DivergenceError
from .priors import Cvae, RuleHead, TemporalHead
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class LossWeights:
    """Weights (lambda_b, lambda_p, lambda_d, lambda_c, lambda_a)."""

    bridge: float = 1.0
    prior: float = 1.0
    temporal: float = 0.1
    classify: float = 1.0
    action: float = 1.0

    def __post_init__(self):
        for name in ("bridge", "prior", "temporal", "classify", "action"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be non-negative")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8


def adam_init(n_params, lr=1e-4, beta1=0.9, beta2=0.999, eps_opt=1e-8) -> AdamState:
    return AdamState(m=np.zeros(n_params), v=np.zeros(n_params), step=0,
                     lr=lr, beta1=beta1, beta2=beta2, eps_opt=eps_opt)


def adam_step(state: AdamState, params, grads):
    """Bias-corrected adaptive moment update; returns (params, state)."""
    grads = np.asarray(grads, dtype=float)
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads**2
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps_opt)
    return new_params, AdamState(m=m, v=v, step=step, lr=state.lr, beta1=state.beta1,
                                 beta2=state.beta2, eps_opt=state.eps_opt)


@dataclass(frozen=True)
class TrainingTuple:
    a0: np.ndarray
    aT: np.ndarray
    t: float
    context: np.ndarray


@dataclass(frozen=True)
class TupleDataset:
    """Expert actions with their conditioning contexts."""

    actions: np.ndarray   # (N, action_dim)
    contexts: np.ndarray  # (N, context_dim)

    def __len__(self):
        return self.actions.shape[0]


def sample_training_tuple(dataset: TupleDataset, prior_policy, schedule: NoiseSchedule,
                          rng_seed, t_eps=1e-3):
    """Draw one (a0, aT, t, context) tuple plus the bridged sample a_t.

    prior_policy(context, rng) -> a_T.  t is uniform on [t_min, T - t_eps].
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    i = int(rng.integers(len(dataset)))
    a0 = dataset.actions[i]
    context = dataset.contexts[i]
    aT = np.asarray(prior_policy(context, rng), dtype=float)
    t = float(rng.uniform(schedule.t_min, schedule.T - t_eps))
    m = bridge_marginal(schedule, a0, aT, t)
    a_t = m.mean + m.std * rng.standard_normal(a0.shape)
    return TrainingTuple(a0=a0, aT=aT, t=t, context=context), a_t


def bridge_loss_core(denoiser: Denoiser, params, schedule, moments, a0, aT, t, a_t, context):
    """Batched weighted-MSE bridge loss; returns (loss, d_params, d_context)."""
    a0 = np.atleast_2d(a0)
    a_t = np.atleast_2d(a_t)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    n = a0.shape[0]
    s = scaling(schedule, t, *moments)
    a_in = s.c_in[:, None] * a_t
    raw, cache = denoiser.forward_cached(params, a_in, s.c_noise, np.atleast_2d(context))
    d_out = s.c_skip[:, None] * a_t + s.c_out[:, None] * np.atleast_2d(raw)
    resid = d_out - a0
    loss = float(np.mean(s.w * np.sum(resid**2, axis=1)))
    if not np.isfinite(loss):
        raise DivergenceError("non-finite bridge loss")
    upstream = (2.0 / n) * (s.w * s.c_out)[:, None] * resid
    grads, _, d_ctx = denoiser.backward(params, cache, upstream)
    return loss, grads, d_ctx


def bridge_loss(batch, denoiser: Denoiser, params, schedule: NoiseSchedule, moments):
    """Loss and parameter gradients for a batch of (TrainingTuple, a_t) pairs."""
    if not batch:
        raise ValueError("empty batch")
    a0 = np.stack([tp.a0 for tp, _ in batch])
    aT = np.stack([tp.aT for tp, _ in batch])
    t = np.array([tp.t for tp, _ in batch])
    ctx = np.stack([tp.context for tp, _ in batch])
    a_t = np.stack([at for _, at in batch])
    loss, grads, _ = bridge_loss_core(denoiser, params, schedule, moments, a0, aT, t, a_t, ctx)
    return loss, grads


@dataclass
class FitResult:
    params: np.ndarray
    metrics: list = field(default_factory=list)  # dicts: step, loss_*, eval_loss
    initial_eval_loss: float = np.nan
    final_eval_loss: float = np.nan


def _frozen_probe(denoiser, schedule, actions, contexts, prior_fn, seed, t_eps, size):
    rng = np.random.default_rng([seed, 424242])
    n = min(size, actions.shape[0])
    idx = rng.integers(actions.shape[0], size=n)
    a0 = actions[idx]
    ctx = contexts[idx]
    aT = prior_fn(ctx, rng)
    t = rng.uniform(schedule.t_min, schedule.T - t_eps, size=n)
    m = bridge_marginal(schedule, a0, aT, t[:, None])
    a_t = m.mean + m.std * rng.standard_normal(a0.shape)
    return a0, aT, t, a_t, ctx


def fit_bridge(denoiser: Denoiser, schedule: NoiseSchedule, moments, actions,
               prior_fn, contexts=None, *, steps=3000, batch=64, lr=1e-4,
               seed=0, t_eps=1e-3, log_every=200, probe_size=256,
               init_params=None) -> FitResult:
    """Train the denoiser to translate the prior into the expert actions.

    actions: (N, action_dim) target pool; prior_fn(ctx_batch, rng) -> a_T
    batch.  contexts default to zero vectors.  eval_loss in the metrics is the
    bridge loss on a frozen probe batch, so it is comparable across steps.
    """
    actions = np.asarray(actions, dtype=float)
    n_data = actions.shape[0]
    if contexts is None:
        contexts = np.zeros((n_data, denoiser.arch.context_dim))
    params = denoiser.init_params([seed, 1]) if init_params is None else np.array(init_params, dtype=float)
    opt = adam_init(params.shape[0], lr=lr)
    probe = _frozen_probe(denoiser, schedule, actions, contexts, prior_fn, seed, t_eps, probe_size)

    def eval_loss(p):
        a0, aT, t, a_t, ctx = probe
        loss, _, _ = bridge_loss_core(denoiser, p, schedule, moments, a0, aT, t, a_t, ctx)
        return loss

    result = FitResult(params=params)
    result.initial_eval_loss = eval_loss(params)
    for step in range(steps):
        rng = np.random.default_rng([seed, 1000, step])
        idx = rng.integers(n_data, size=batch)
        a0 = actions[idx]
        ctx = contexts[idx]
        aT = np.asarray(prior_fn(ctx, rng), dtype=float)
        t = rng.uniform(schedule.t_min, schedule.T - t_eps, size=batch)
        m = bridge_marginal(schedule, a0, aT, t[:, None])
        a_t = m.mean + m.std * rng.standard_normal(a0.shape)
        loss, grads, _ = bridge_loss_core(denoiser, params, schedule, moments, a0, aT, t, a_t, ctx)
        params, opt = adam_step(opt, params, grads)
        if step % log_every == 0 or step == steps - 1:
            result.metrics.append(
                dict(step=step, loss_bridge=loss, loss_prior=0.0, loss_temporal=0.0,
                     loss_total=loss, eval_loss=eval_loss(params))
            )
    result.params = params
    result.final_eval_loss = eval_loss(params)
    return result


@dataclass
class PolicyComponents:
    """All trainable pieces of one prior-kind policy, with flat-vector slices."""

    denoiser: Denoiser
    encoder: object            # Mlp obs -> context
    prior_kind: str            # gaussian | rule | cvae
    rule_head: RuleHead | None
    cvae: Cvae | None
    temporal: TemporalHead | None
    n_waypoints: int

    def layout(self):
        sizes = [("denoiser", self.denoiser.n_params), ("encoder", self.encoder.n_params)]
        if self.rule_head is not None:
            sizes.append(("rule_head", self.rule_head.n_params))
        if self.cvae is not None:
            sizes.append(("cvae", self.cvae.n_params))
        if self.temporal is not None:
            sizes.append(("temporal", self.temporal.n_params))
        slices, off = {}, 0
        for name, n in sizes:
            slices[name] = slice(off, off + n)
            off += n
        return slices, off

    def init_params(self, seed):
        slices, total = self.layout()
        params = np.zeros(total)
        params[slices["denoiser"]] = self.denoiser.init_params([seed, 11])
        params[slices["encoder"]] = self.encoder.init(np.random.default_rng([seed, 12]))
        if "rule_head" in slices:
            params[slices["rule_head"]] = self.rule_head.init_params([seed, 13])
        if "cvae" in slices:
            params[slices["cvae"]] = self.cvae.init_params([seed, 14])
        if "temporal" in slices:
            params[slices["temporal"]] = self.temporal.init_params([seed, 15])
        return params


def sample_prior_batch(components: PolicyComponents, params, contexts, rng,
                       min_std=0.05, max_std=0.5):
    """Draw a_T for a batch of contexts from the component's prior policy."""
    from .priors import gaussian_prior, sample_parabolic_prior

    contexts = np.atleast_2d(contexts)
    n = contexts.shape[0]
    dim = 2 * components.n_waypoints
    if components.prior_kind == "gaussian":
        return rng.standard_normal((n, dim))
    slices, _ = components.layout()
    if components.prior_kind == "rule":
        out = np.empty((n, dim))
        head_params = params[slices["rule_head"]]
        for i in range(n):
            ro = components.rule_head.forward(head_params, contexts[i])
            out[i] = sample_parabolic_prior(ro, rng, components.n_waypoints,
                                            min_std=min_std, max_std=max_std)
        return out
    if components.prior_kind == "cvae":
        return components.cvae.forward(params[slices["cvae"]], contexts, rng)
    raise ConfigError(f"unknown prior kind {components.prior_kind!r}")


def total_loss(components: PolicyComponents, params, schedule: NoiseSchedule, moments,
               batch, weights: LossWeights, rng, min_std=0.05, max_std=0.5,
               train_mask=("denoiser", "encoder", "rule_head", "cvae", "temporal")):
    """Composite loss lambda_b L_b + lambda_p L_p + lambda_d L_d on one batch.

    batch: dict with obs, actions, classes, lengths, remaining (arrays).
    Gradients flow into the encoder from every enabled head; the sampled
    prior action a_T enters the bridge loss as data (no gradient through
    prior sampling).  Returns (total, parts, grads).
    """
    slices, total_n = components.layout()
    grads = np.zeros(total_n)
    obs = np.atleast_2d(batch["obs"])
    a0 = np.atleast_2d(batch["actions"])
    n = obs.shape[0]

    enc_params = params[slices["encoder"]]
    ctx, enc_cache = components.encoder.forward_cached(enc_params, obs)
    ctx = np.atleast_2d(ctx)
    d_ctx = np.zeros_like(ctx)
    parts = {"bridge": 0.0, "prior": 0.0, "temporal": 0.0}

    if weights.bridge > 0:
        aT = sample_prior_batch(components, params, ctx, rng, min_std, max_std)
        t = rng.uniform(schedule.t_min, schedule.T - 1e-3, size=n)
        m = bridge_marginal(schedule, a0, aT, t[:, None])
        a_t = m.mean + m.std * rng.standard_normal(a0.shape)
        lb, d_den, d_ctx_b = bridge_loss_core(
            components.denoiser, params[slices["denoiser"]], schedule, moments,
            a0, aT, t, a_t, ctx)
        parts["bridge"] = lb
        if "denoiser" in train_mask:
            grads[slices["denoiser"]] += weights.bridge * d_den
        d_ctx += weights.bridge * d_ctx_b

    if weights.prior > 0 and components.prior_kind == "rule":
        lp, d_head, d_ctx_p = components.rule_head.loss_and_grads(
            params[slices["rule_head"]], ctx, batch["classes"], a0,
            components.n_waypoints, lambda_c=weights.classify, lambda_a=weights.action)
        parts["prior"] = lp
        if "rule_head" in train_mask:
            grads[slices["rule_head"]] += weights.prior * d_head
        d_ctx += weights.prior * d_ctx_p
    elif weights.prior > 0 and components.prior_kind == "cvae":
        lp, d_cvae, d_ctx_p = components.cvae.loss_and_grads(
            params[slices["cvae"]], ctx, a0, rng)
        parts["prior"] = lp
        if "cvae" in train_mask:
            grads[slices["cvae"]] += weights.prior * d_cvae
        d_ctx += weights.prior * d_ctx_p

    if weights.temporal > 0 and components.temporal is not None and "remaining" in batch:
        ld, d_temp, d_ctx_d = components.temporal.loss_and_grads(
            params[slices["temporal"]], ctx, batch["remaining"])
        parts["temporal"] = ld
        if "temporal" in train_mask:
            grads[slices["temporal"]] += weights.temporal * d_temp
        d_ctx += weights.temporal * d_ctx_d

    if "encoder" in train_mask:
        d_enc, _ = components.encoder.backward(enc_params, enc_cache, d_ctx)
        grads[slices["encoder"]] += d_enc

    total = (weights.bridge * parts["bridge"] + weights.prior * parts["prior"]
             + weights.temporal * parts["temporal"])
    if not np.isfinite(total):
        raise DivergenceError("non-finite total loss")
    return total, parts, grads


def fit_joint(components: PolicyComponents, schedule, moments, data, weights: LossWeights,
              *, steps=6000, batch=64, lr=1e-4, seed=0, log_every=500,
              two_stage=False, min_std=0.05, max_std=0.5) -> FitResult:
    """Joint training of denoiser, encoder, prior head, and temporal head.

    data: dict of arrays obs (N, obs_dim), actions (N, action_dim),
    classes (N,), lengths (N,), remaining (N,).  With two_stage=True the
    prior/temporal heads and encoder train first with the bridge loss off,
    then the denoiser trains against the frozen rest.
    """
    n_data = data["obs"].shape[0]
    params = components.init_params(seed)
    result = FitResult(params=params)

    stages = [(weights, ("denoiser", "encoder", "rule_head", "cvae", "temporal"), steps)]
    if two_stage:
        w1 = LossWeights(bridge=0.0, prior=weights.prior, temporal=weights.temporal,
                         classify=weights.classify, action=weights.action)
        w2 = LossWeights(bridge=weights.bridge, prior=0.0, temporal=0.0)
        stages = [(w1, ("encoder", "rule_head", "cvae", "temporal"), steps // 2),
                  (w2, ("denoiser",), steps - steps // 2)]

    opt = adam_init(params.shape[0], lr=lr)
    global_step = 0
    for stage_weights, mask, stage_steps in stages:
        for _ in range(stage_steps):
            rng = np.random.default_rng([seed, 2000, global_step])
            idx = rng.integers(n_data, size=batch)
            mb = {k: v[idx] for k, v in data.items()}
            total, parts, grads = total_loss(components, params, schedule, moments,
                                             mb, stage_weights, rng,
                                             min_std=min_std, max_std=max_std,
                                             train_mask=mask)
            params, opt = adam_step(opt, params, grads)
            if global_step % log_every == 0 or global_step == steps - 1:
                result.metrics.append(dict(step=global_step,
                                           loss_bridge=parts["bridge"],
                                           loss_prior=parts["prior"],
                                           loss_temporal=parts["temporal"],
                                           loss_total=total,
                                           eval_loss=total))
            global_step += 1
    result.params = params
    if result.metrics:
        result.initial_eval_loss = result.metrics[0]["loss_total"]
        result.final_eval_loss = result.metrics[-1]["loss_total"]
    return result
