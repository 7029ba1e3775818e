"""FiLM-conditioned denoising network over flattened waypoint vectors.

The network takes the scaled state c_in * a_t concatenated with a sinusoidal
embedding of c_noise, runs it through tanh hidden layers, and modulates every
hidden pre-activation with feature-wise scale/shift computed linearly from
the context vector:

    z  = W x + b
    u  = gamma(c) * z + beta(c)        gamma(c) = G c + g0, beta(c) = B c + b0
    x' = tanh(u)

Gradients are hand-written reverse mode and validated against central finite
differences.  All math is float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .nets import _as_batch


def time_embedding(c_noise, dim):
    """Sinusoidal features [sin(2^j c), cos(2^j c)] of the scalar time input."""
    if dim % 2 != 0 or dim <= 0:
        raise ConfigError("time_embed_dim must be a positive even number")
    c = np.atleast_1d(np.asarray(c_noise, dtype=float))
    freqs = 2.0 ** np.arange(dim // 2)
    ang = c[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass(frozen=True)
class DenoiserArch:
    action_dim: int = 16
    hidden: tuple = (64, 64, 64)
    context_dim: int = 16
    time_embed_dim: int = 4

    def __post_init__(self):
        if self.action_dim <= 0 or self.context_dim <= 0:
            raise ConfigError("action_dim and context_dim must be positive")
        if len(self.hidden) == 0 or any(h <= 0 for h in self.hidden):
            raise ConfigError(f"zero-width hidden layer in {self.hidden}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def in_dim(self) -> int:
        return self.action_dim + self.time_embed_dim

    def to_dict(self):
        return {
            "action_dim": self.action_dim,
            "hidden": list(self.hidden),
            "context_dim": self.context_dim,
            "time_embed_dim": self.time_embed_dim,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            action_dim=int(d["action_dim"]),
            hidden=tuple(int(h) for h in d["hidden"]),
            context_dim=int(d["context_dim"]),
            time_embed_dim=int(d["time_embed_dim"]),
        )


def param_count(arch: DenoiserArch) -> int:
    """Analytic parameter count: per hidden layer a (m x k) weight + bias plus
    two FiLM maps (m x ctx) + bias each, then the linear output head."""
    n = 0
    k = arch.in_dim
    for m in arch.hidden:
        n += m * k + m                      # affine
        n += 2 * (m * arch.context_dim + m)  # FiLM gamma and beta
        k = m
    n += arch.action_dim * k + arch.action_dim
    return n


@dataclass
class Denoiser:
    arch: DenoiserArch = field(default_factory=DenoiserArch)

    @property
    def n_params(self) -> int:
        return param_count(self.arch)

    def init_params(self, seed) -> np.ndarray:
        """Deterministic init: weights ~ N(0, 1/fan_in); FiLM biases start at
        gamma = 1, beta = 0 so a zero context leaves the MLP unmodulated."""
        rng = np.random.default_rng(seed)
        a = self.arch
        chunks = []
        k = a.in_dim
        for m in a.hidden:
            chunks.append(rng.standard_normal(m * k) / np.sqrt(k))
            chunks.append(np.zeros(m))
            chunks.append(rng.standard_normal(m * a.context_dim) / np.sqrt(a.context_dim))
            chunks.append(np.ones(m))   # gamma bias
            chunks.append(rng.standard_normal(m * a.context_dim) / np.sqrt(a.context_dim))
            chunks.append(np.zeros(m))  # beta bias
            k = m
        chunks.append(rng.standard_normal(a.action_dim * k) / np.sqrt(k))
        chunks.append(np.zeros(a.action_dim))
        return np.concatenate(chunks)

    def _views(self, params):
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} params, got shape {params.shape}")
        a = self.arch
        off = 0

        def take(m, k=None):
            nonlocal off
            size = m * k if k else m
            v = params[off:off + size]
            off += size
            return v.reshape(m, k) if k else v

        layers = []
        k = a.in_dim
        for m in a.hidden:
            layers.append(
                dict(
                    w=take(m, k), b=take(m),
                    gw=take(m, a.context_dim), gb=take(m),
                    bw=take(m, a.context_dim), bb=take(m),
                )
            )
            k = m
        out = dict(w=take(a.action_dim, k), b=take(a.action_dim))
        return layers, out

    def forward(self, params, a_in, c_noise, context):
        y, _ = self.forward_cached(params, a_in, c_noise, context)
        return y

    def forward_cached(self, params, a_in, c_noise, context):
        a = self.arch
        a_in, squeeze = _as_batch(a_in, a.action_dim, "a_in")
        context, _ = _as_batch(context, a.context_dim, "context")
        if context.shape[0] == 1 and a_in.shape[0] > 1:
            context = np.broadcast_to(context, (a_in.shape[0], a.context_dim))
        if context.shape[0] != a_in.shape[0]:
            raise ValueError("context batch size does not match a_in")
        c = np.broadcast_to(np.atleast_1d(np.asarray(c_noise, dtype=float)), (a_in.shape[0],))
        x = np.concatenate([a_in, time_embedding(c, a.time_embed_dim)], axis=1)

        layers, out = self._views(params)
        cache = dict(x0=x, context=context, layers=[], squeeze=squeeze)
        h = x
        for L in layers:
            z = h @ L["w"].T + L["b"]
            gamma = context @ L["gw"].T + L["gb"]
            beta = context @ L["bw"].T + L["bb"]
            u = gamma * z + beta
            hn = np.tanh(u)
            cache["layers"].append(dict(h_in=h, z=z, gamma=gamma, h_out=hn))
            h = hn
        y = h @ out["w"].T + out["b"]
        return (y[0] if squeeze else y), cache

    def backward(self, params, cache, upstream):
        """Gradients of <upstream, forward(...)> w.r.t. params, the scaled
        action input, and the context vector."""
        a = self.arch
        upstream = np.asarray(upstream, dtype=float)
        if cache["squeeze"]:
            upstream = upstream[None, :]
        layers, out = self._views(params)
        grads = np.zeros(self.n_params)
        gl, gout = self._views(grads)

        context = cache["context"]
        d_ctx = np.zeros_like(context)
        h_last = cache["layers"][-1]["h_out"]
        gout["w"] += upstream.T @ h_last
        gout["b"] += upstream.sum(axis=0)
        dh = upstream @ out["w"]
        for L, G, C in zip(reversed(layers), reversed(gl), reversed(cache["layers"])):
            du = dh * (1.0 - C["h_out"] ** 2)
            dgamma = du * C["z"]
            dbeta = du
            dz = du * C["gamma"]
            G["gw"] += dgamma.T @ context
            G["gb"] += dgamma.sum(axis=0)
            G["bw"] += dbeta.T @ context
            G["bb"] += dbeta.sum(axis=0)
            G["w"] += dz.T @ C["h_in"]
            G["b"] += dz.sum(axis=0)
            d_ctx += dgamma @ L["gw"] + dbeta @ L["bw"]
            dh = dz @ L["w"]
        d_a_in = dh[:, : a.action_dim]
        if cache["squeeze"]:
            d_a_in, d_ctx = d_a_in[0], d_ctx[0]
        return grads, d_a_in, d_ctx

    def finite_diff_check(self, params, sample_inputs, eps=1e-5, n_coords=200, seed=0):
        """Max relative error between analytic and central-difference gradients
        over randomly chosen parameter coordinates."""
        if not (1e-7 <= eps <= 1e-3):
            raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
        a_in, c_noise, context = sample_inputs
        rng = np.random.default_rng(seed)
        y, cache = self.forward_cached(params, a_in, c_noise, context)
        probe = rng.standard_normal(y.shape)
        grads, _, _ = self.backward(params, cache, probe)

        coords = rng.choice(self.n_params, size=min(n_coords, self.n_params), replace=False)
        worst = 0.0
        p = np.array(params, dtype=float)
        for i in coords:
            orig = p[i]
            p[i] = orig + eps
            f_plus = float(np.sum(probe * self.forward(p, a_in, c_noise, context)))
            p[i] = orig - eps
            f_minus = float(np.sum(probe * self.forward(p, a_in, c_noise, context)))
            p[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(grads[i]), abs(numeric), 1e-12)
            worst = max(worst, abs(grads[i] - numeric) / denom)
        return worst
