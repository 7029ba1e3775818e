"""Small fully connected networks with hand-written reverse-mode gradients.

Parameters live in flat float64 vectors; layer weights are views into the
flat vector so optimizers operate on a single array.  Forward passes return a
cache that the matching backward pass consumes.  Everything is pure: no
module state is mutated by forward/backward.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


def _as_batch(x, dim, name):
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"{name} must have trailing dimension {dim}, got shape {x.shape}")
    return x, squeeze


@dataclass(frozen=True)
class Mlp:
    """Plain MLP: affine layers with tanh between them, linear output.

    dims = (d_in, h_1, ..., h_L, d_out).
    """

    dims: tuple

    def __post_init__(self):
        if len(self.dims) < 2 or any(d <= 0 for d in self.dims):
            raise ConfigError(f"invalid MLP dims {self.dims}")

    @property
    def n_params(self) -> int:
        return sum((k + 1) * m for k, m in zip(self.dims[:-1], self.dims[1:]))

    def init(self, rng) -> np.ndarray:
        """Weights ~ N(0, 1/fan_in), biases zero."""
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        chunks = []
        for k, m in zip(self.dims[:-1], self.dims[1:]):
            chunks.append(rng.standard_normal(m * k) / np.sqrt(k))
            chunks.append(np.zeros(m))
        return np.concatenate(chunks)

    def _views(self, params):
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} params, got shape {params.shape}")
        out, off = [], 0
        for k, m in zip(self.dims[:-1], self.dims[1:]):
            w = params[off:off + m * k].reshape(m, k)
            off += m * k
            b = params[off:off + m]
            off += m
            out.append((w, b))
        return out

    def forward(self, params, x):
        y, _ = self.forward_cached(params, x)
        return y

    def forward_cached(self, params, x):
        x, squeeze = _as_batch(x, self.dims[0], "input")
        layers = self._views(params)
        acts = [x]
        h = x
        for i, (w, b) in enumerate(layers):
            z = h @ w.T + b
            h = np.tanh(z) if i < len(layers) - 1 else z
            acts.append(h)
        y = acts[-1][0] if squeeze else acts[-1]
        return y, (acts, squeeze)

    def backward(self, params, cache, upstream):
        """Returns (d_params, d_input) for the recorded forward pass."""
        acts, squeeze = cache
        upstream = np.asarray(upstream, dtype=float)
        if squeeze:
            upstream = upstream[None, :]
        layers = self._views(params)
        grads = np.zeros(self.n_params)
        gviews = Mlp._views(self, grads)
        dh = upstream
        for i in reversed(range(len(layers))):
            w, _ = layers[i]
            gw, gb = gviews[i]
            dz = dh if i == len(layers) - 1 else dh * (1.0 - acts[i + 1] ** 2)
            gw += dz.T @ acts[i]
            gb += dz.sum(axis=0)
            dh = dz @ w
        d_input = dh[0] if squeeze else dh
        return grads, d_input
