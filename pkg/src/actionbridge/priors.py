"""Source-distribution policies producing the prior action a_T.

Three families are provided:

  * Gaussian white noise (the uninformative prior used by vanilla diffusion),
  * a rule-based prior: a linear head classifies the movement decision and
    regresses a path length, then a downward-opening parabola through the
    origin and the sampled endpoint is discretized into waypoints,
  * a learned conditional VAE decoding a latent draw into an action sequence.

Waypoint vectors are flat [x0, y0, x1, y1, ...] in the robot frame with y
forward and x lateral (positive to the right).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError
from .nets import Mlp, _as_batch


class DecisionCategory(enum.IntEnum):
    STRAIGHT = 0
    LEFT_TURN = 1
    RIGHT_TURN = 2
    U_TURN_LEFT = 3
    U_TURN_RIGHT = 4


# Heading bands in degrees over (-180, 180]; theta = atan2(x, y) so positive
# angles turn right.  Bounds are (lo, hi) with lo-inclusive/hi-exclusive
# resolved in class_of_heading so the five bands partition the circle.
HEADING_BANDS = {
    DecisionCategory.STRAIGHT: (-15.0, 15.0),
    DecisionCategory.RIGHT_TURN: (15.0, 100.0),
    DecisionCategory.U_TURN_RIGHT: (100.0, 180.0),
    DecisionCategory.LEFT_TURN: (-100.0, -15.0),
    DecisionCategory.U_TURN_LEFT: (-180.0, -100.0),
}


def class_of_heading(theta_deg: float) -> DecisionCategory:
    """Decision class of a heading angle in degrees, theta in (-180, 180]."""
    t = float(theta_deg)
    if t <= -180.0 or t > 180.0:
        t = (t + 180.0) % 360.0 - 180.0
        if t == -180.0:
            t = 180.0
    if -15.0 < t < 15.0:
        return DecisionCategory.STRAIGHT
    if 15.0 <= t < 100.0:
        return DecisionCategory.RIGHT_TURN
    if 100.0 <= t <= 180.0:
        return DecisionCategory.U_TURN_RIGHT
    if -100.0 < t <= -15.0:
        return DecisionCategory.LEFT_TURN
    return DecisionCategory.U_TURN_LEFT


def gaussian_prior(n_waypoints, rng_seed) -> np.ndarray:
    """I.i.d. standard normal prior action of length 2 * n_waypoints."""
    if n_waypoints < 1:
        raise ValueError("n_waypoints must be >= 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return rng.standard_normal(2 * n_waypoints)


@dataclass(frozen=True)
class ParabolicParams:
    """Vertex-form parabola y = a (x - h)^2 + k_v through p1 and p2, a < 0."""

    a: float
    h: float
    k_v: float
    p1: tuple
    p2: tuple

    def y(self, x):
        return self.a * (np.asarray(x, dtype=float) - self.h) ** 2 + self.k_v


def parabola_fit(p1, p2, h) -> ParabolicParams:
    """Member of the two-point parabola family selected by the symmetry axis h.

    a = (y2 - y1) / ((x2 - x1)(x2 + x1 - 2h)),  k_v = y1 - a (x1 - h)^2.
    """
    (x1, y1), (x2, y2) = (float(p1[0]), float(p1[1])), (float(p2[0]), float(p2[1]))
    if x1 == x2:
        raise DegenerateGeometryError("equal abscissae: no y(x) parabola through the points")
    denom = (x2 - x1) * (x2 + x1 - 2.0 * h)
    if denom == 0.0:
        raise DegenerateGeometryError("h lies on the chord midline; family degenerates")
    a = (y2 - y1) / denom
    k_v = y1 - a * (x1 - h) ** 2
    return ParabolicParams(a=a, h=float(h), k_v=k_v, p1=(x1, y1), p2=(x2, y2))


def admissible_h_interval(p1, p2):
    """Open interval of symmetry axes h for which the fitted parabola opens
    downward (a < 0).  Half-infinite; returned as (lo, hi) with +-inf."""
    (x1, y1), (x2, y2) = (float(p1[0]), float(p1[1])), (float(p2[0]), float(p2[1]))
    if x1 == x2:
        raise DegenerateGeometryError("equal abscissae")
    if y1 == y2:
        raise DegenerateGeometryError(
            "equal heights: no downward-opening member with a != 0"
        )
    mid = 0.5 * (x1 + x2)
    # a < 0 needs (y2 - y1) and (x2 - x1)(x2 + x1 - 2h) of opposite sign.
    if (y2 > y1) == (x2 > x1):
        return (mid, np.inf)
    return (-np.inf, mid)


def noise_std(confidence, min_std, max_std) -> float:
    """Confidence-scaled noise level: min_std + (max_std - min_std)(1 - confidence)."""
    if not 0.0 <= confidence <= 1.0:
        raise ValueError(f"confidence must lie in [0, 1], got {confidence}")
    if not 0.0 < min_std <= max_std:
        raise ValueError("need 0 < min_std <= max_std")
    return min_std + (max_std - min_std) * (1.0 - confidence)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _softplus(x):
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class RuleHeadOutput:
    class_probs: np.ndarray   # simplex over the five decision classes
    path_length: float        # softplus-positive endpoint distance, meters
    confidence: float         # max class probability


class RuleHead:
    """Linear map from the context vector to class logits and a raw length."""

    N_CLASSES = 5

    def __init__(self, context_dim):
        self.context_dim = context_dim
        self.n_out = self.N_CLASSES + 1

    @property
    def n_params(self):
        return self.n_out * (self.context_dim + 1)

    def init_params(self, seed):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal(self.n_out * self.context_dim) / np.sqrt(self.context_dim)
        return np.concatenate([w, np.zeros(self.n_out)])

    def _views(self, params):
        params = np.asarray(params, dtype=float)
        w = params[: self.n_out * self.context_dim].reshape(self.n_out, self.context_dim)
        b = params[self.n_out * self.context_dim:]
        return w, b

    def raw_forward(self, params, context):
        context, squeeze = _as_batch(context, self.context_dim, "context")
        w, b = self._views(params)
        out = context @ w.T + b
        return out, context, squeeze

    def forward(self, params, context) -> RuleHeadOutput:
        out, _, squeeze = self.raw_forward(params, context)
        if not squeeze:
            raise ValueError("forward takes a single context; use raw_forward for batches")
        probs = _softmax(out[0, : self.N_CLASSES])
        return RuleHeadOutput(
            class_probs=probs,
            path_length=float(_softplus(out[0, self.N_CLASSES])),
            confidence=float(probs.max()),
        )

    def loss_and_grads(self, params, context, true_class, true_action, n_waypoints,
                       lambda_c=1.0, lambda_a=1.0):
        """Cross-entropy on the decision class plus MSE between the
        deterministic parabolic action at the predicted length and the expert
        action.  Returns (loss, d_params, d_context)."""
        out, ctx, _ = self.raw_forward(params, context)
        true_action = np.atleast_2d(np.asarray(true_action, dtype=float))
        true_class = np.atleast_1d(np.asarray(true_class, dtype=int))
        n = out.shape[0]
        logits, raw_len = out[:, : self.N_CLASSES], out[:, self.N_CLASSES]
        probs = _softmax(logits)
        ce = -np.log(np.maximum(probs[np.arange(n), true_class], 1e-300))

        d = _softplus(raw_len)
        templates = np.stack([parabolic_template(DecisionCategory(c), n_waypoints)
                              for c in true_class])
        pred = d[:, None] * templates
        resid = pred - true_action
        mse = np.sum(resid**2, axis=1)
        loss = float(np.mean(lambda_c * ce + lambda_a * mse))

        d_logits = lambda_c * (probs - np.eye(self.N_CLASSES)[true_class]) / n
        d_d = lambda_a * 2.0 * np.sum(resid * templates, axis=1) / n
        d_raw_len = d_d / (1.0 + np.exp(-raw_len))  # softplus' = sigmoid
        d_out = np.concatenate([d_logits, d_raw_len[:, None]], axis=1)
        w, _ = self._views(params)
        d_w = d_out.T @ ctx
        d_b = d_out.sum(axis=0)
        d_ctx = d_out @ w
        return loss, np.concatenate([d_w.ravel(), d_b]), d_ctx


def _band_radians(category: DecisionCategory):
    lo, hi = HEADING_BANDS[category]
    return np.deg2rad(lo), np.deg2rad(hi)


def _straight_line_points(endpoint, n_waypoints):
    frac = np.linspace(0.0, 1.0, n_waypoints)
    return np.column_stack([frac * endpoint[0], frac * endpoint[1]]).ravel()


def _parabola_points(endpoint, h, n_waypoints):
    par = parabola_fit((0.0, 0.0), endpoint, h)
    xs = np.linspace(0.0, endpoint[0], n_waypoints)
    return np.column_stack([xs, par.y(xs)]).ravel()


def _clipped_h_interval(endpoint, d):
    lo, hi = admissible_h_interval((0.0, 0.0), endpoint)
    lo, hi = max(lo, -5.0 * d), min(hi, 5.0 * d)
    if not lo < hi:
        raise DegenerateGeometryError("admissible interval empty after clipping")
    return lo, hi


def parabolic_template(category: DecisionCategory, n_waypoints) -> np.ndarray:
    """Deterministic unit-length (d = 1) prior action for a decision class:
    heading at the band midpoint, symmetry axis at the center of the clipped
    admissible interval.  The full construction scales linearly with d."""
    lo, hi = _band_radians(category)
    theta = 0.5 * (lo + hi)
    endpoint = (np.sin(theta), np.cos(theta))
    if abs(endpoint[0]) < 1e-6 or abs(endpoint[1]) < 1e-12:
        return _straight_line_points(endpoint, n_waypoints)
    try:
        ilo, ihi = _clipped_h_interval(endpoint, 1.0)
    except DegenerateGeometryError:
        return _straight_line_points(endpoint, n_waypoints)
    return _parabola_points(endpoint, 0.5 * (ilo + ihi), n_waypoints)


def sample_parabolic_prior(rule_out: RuleHeadOutput, rng_seed, n_waypoints,
                           min_std=0.05, max_std=0.5) -> np.ndarray:
    """Sample a parabolic prior action from a rule-head prediction.

    The heading is the predicted class's band midpoint perturbed by
    confidence-scaled Gaussian noise (clipped to the band); the endpoint
    distance is the predicted length under the same noise scale.  Degenerate
    geometry (near-vertical chord or equal heights) falls back to a straight
    line toward the endpoint.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    category = DecisionCategory(int(np.argmax(rule_out.class_probs)))
    sigma = noise_std(rule_out.confidence, min_std, max_std)
    lo, hi = _band_radians(category)
    theta = np.clip(0.5 * (lo + hi) + sigma * rng.standard_normal(), lo + 1e-9, hi - 1e-9)
    d = max(rule_out.path_length + sigma * rng.standard_normal(), 0.05)
    endpoint = (d * np.sin(theta), d * np.cos(theta))
    if abs(endpoint[0]) < 1e-6:
        return _straight_line_points(endpoint, n_waypoints)
    try:
        ilo, ihi = _clipped_h_interval(endpoint, d)
    except DegenerateGeometryError:
        return _straight_line_points(endpoint, n_waypoints)
    h = rng.uniform(ilo + 0.25 * (ihi - ilo), ilo + 0.75 * (ihi - ilo))
    return _parabola_points(endpoint, h, n_waypoints)


def rule_loss(head_out: RuleHeadOutput, true_class, true_action, predicted_action,
              lambda_c=1.0, lambda_a=1.0) -> float:
    """Single-sample rule-prior loss: lambda_c * cross-entropy + lambda_a * MSE."""
    true_class = int(true_class)
    ce = -np.log(max(float(head_out.class_probs[true_class]), 1e-300))
    resid = np.asarray(predicted_action, dtype=float) - np.asarray(true_action, dtype=float)
    return float(lambda_c * ce + lambda_a * np.sum(resid**2))


@dataclass(frozen=True)
class CvaeArch:
    context_dim: int = 16
    action_dim: int = 16
    latent_dim: int = 8
    hidden: tuple = (64, 64)

    def to_dict(self):
        return {
            "context_dim": self.context_dim,
            "action_dim": self.action_dim,
            "latent_dim": self.latent_dim,
            "hidden": list(self.hidden),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            context_dim=int(d["context_dim"]),
            action_dim=int(d["action_dim"]),
            latent_dim=int(d["latent_dim"]),
            hidden=tuple(int(h) for h in d["hidden"]),
        )


class Cvae:
    """Conditional VAE with diagonal Gaussian encoder and conditional prior.

    encoder  (context, action) -> (mu_q, logvar_q)
    prior     context          -> (mu_p, logvar_p)
    decoder  (context, z)      -> action
    """

    def __init__(self, arch: CvaeArch = CvaeArch()):
        self.arch = arch
        h = arch.hidden
        self.enc = Mlp((arch.context_dim + arch.action_dim, *h, 2 * arch.latent_dim))
        self.pri = Mlp((arch.context_dim, *h, 2 * arch.latent_dim))
        self.dec = Mlp((arch.context_dim + arch.latent_dim, *h, arch.action_dim))

    @property
    def n_params(self):
        return self.enc.n_params + self.pri.n_params + self.dec.n_params

    def init_params(self, seed):
        rng = np.random.default_rng(seed)
        return np.concatenate([self.enc.init(rng), self.pri.init(rng), self.dec.init(rng)])

    def _split(self, params):
        params = np.asarray(params, dtype=float)
        i = self.enc.n_params
        j = i + self.pri.n_params
        return params[:i], params[i:j], params[j:]

    def prior_stats(self, params, context):
        _, pp, _ = self._split(params)
        out = self.pri.forward(pp, context)
        ld = self.arch.latent_dim
        return out[..., :ld], out[..., ld:]

    def decode(self, params, context, z):
        _, _, dp = self._split(params)
        return self.dec.forward(dp, np.concatenate([np.atleast_2d(context),
                                                    np.atleast_2d(z)], axis=-1))

    def mean_action(self, params, context):
        """Decode the conditional prior's mean latent."""
        mu_p, _ = self.prior_stats(params, context)
        out = self.decode(params, np.atleast_2d(context), np.atleast_2d(mu_p))
        return out[0] if np.ndim(context) == 1 else out

    def forward(self, params, context, rng_seed) -> np.ndarray:
        """Sample an action: z ~ p(z | context), then decode."""
        rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
        single = np.ndim(context) == 1
        ctx = np.atleast_2d(context)
        mu_p, logvar_p = self.prior_stats(params, ctx)
        z = mu_p + np.exp(0.5 * logvar_p) * rng.standard_normal(mu_p.shape)
        out = self.decode(params, ctx, z)
        return out[0] if single else out

    def loss_and_grads(self, params, context, true_action, rng):
        """Reconstruction MSE plus analytic KL(q || p), one reparametrized
        latent draw per sample.  Returns (loss, d_params, d_context)."""
        ctx = np.atleast_2d(np.asarray(context, dtype=float))
        act = np.atleast_2d(np.asarray(true_action, dtype=float))
        n = ctx.shape[0]
        ld = self.arch.latent_dim
        ep, pp, dp = self._split(params)

        enc_in = np.concatenate([ctx, act], axis=1)
        enc_out, enc_cache = self.enc.forward_cached(ep, enc_in)
        mu_q, logvar_q = enc_out[:, :ld], enc_out[:, ld:]
        pri_out, pri_cache = self.pri.forward_cached(pp, ctx)
        mu_p, logvar_p = pri_out[:, :ld], pri_out[:, ld:]

        eps = rng.standard_normal(mu_q.shape)
        z = mu_q + np.exp(0.5 * logvar_q) * eps
        dec_in = np.concatenate([ctx, z], axis=1)
        rec, dec_cache = self.dec.forward_cached(dp, dec_in)

        resid = rec - act
        var_q, var_p = np.exp(logvar_q), np.exp(logvar_p)
        dmu = mu_q - mu_p
        kl = 0.5 * np.sum(logvar_p - logvar_q + (var_q + dmu**2) / var_p - 1.0, axis=1)
        loss = float(np.mean(np.sum(resid**2, axis=1) + kl))

        d_rec = 2.0 * resid / n
        d_dec, d_dec_in = self.dec.backward(dp, dec_cache, d_rec)
        d_ctx = d_dec_in[:, : self.arch.context_dim].copy()
        dz = d_dec_in[:, self.arch.context_dim:]

        d_mu_q = dz + dmu / var_p / n
        d_logvar_q = dz * 0.5 * (z - mu_q) + 0.5 * (var_q / var_p - 1.0) / n
        d_mu_p = -dmu / var_p / n
        d_logvar_p = 0.5 * (1.0 - (var_q + dmu**2) / var_p) / n

        d_enc, d_enc_in = self.enc.backward(ep, enc_cache,
                                            np.concatenate([d_mu_q, d_logvar_q], axis=1))
        d_ctx += d_enc_in[:, : self.arch.context_dim]
        d_pri, d_pri_in = self.pri.backward(pp, pri_cache,
                                            np.concatenate([d_mu_p, d_logvar_p], axis=1))
        d_ctx += d_pri_in
        return loss, np.concatenate([d_enc, d_pri, d_dec]), d_ctx


def cvae_loss(cvae: Cvae, params, observation_context, true_action, rng_seed) -> float:
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    loss, _, _ = cvae.loss_and_grads(params, observation_context, true_action, rng)
    if not np.isfinite(loss):
        raise ValueError("non-finite CVAE loss")
    return loss


class TemporalHead:
    """MLP regressor of the remaining step count to the goal."""

    def __init__(self, context_dim, hidden=(64,)):
        self.mlp = Mlp((context_dim, *hidden, 1))

    @property
    def n_params(self):
        return self.mlp.n_params

    def init_params(self, seed):
        return self.mlp.init(np.random.default_rng(seed))

    def predict(self, params, context):
        out = self.mlp.forward(params, context)
        return out[..., 0]

    def loss_and_grads(self, params, contexts, true_step_counts):
        counts = np.atleast_1d(np.asarray(true_step_counts, dtype=float))
        out, cache = self.mlp.forward_cached(params, contexts)
        out = np.atleast_2d(out)
        resid = out[:, 0] - counts
        n = resid.shape[0]
        loss = float(np.mean(resid**2))
        d_params, d_ctx = self.mlp.backward(params, cache, (2.0 * resid / n)[:, None])
        return loss, d_params, d_ctx


def temporal_distance_loss(head: TemporalHead, head_params, contexts, true_step_counts) -> float:
    if np.any(np.asarray(true_step_counts) < 0):
        raise ValueError("step counts must be >= 0")
    loss, _, _ = head.loss_and_grads(head_params, contexts, true_step_counts)
    return loss
