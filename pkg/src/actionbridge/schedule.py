"""Signal/noise schedules for variance-preserving and variance-exploding diffusion.

A schedule supplies alpha(t), sigma(t) and the SDE coefficients f, g^2 on
[t_min, T].  The VE instantiation uses sigma(t) = t, alpha = 1; the VP
instantiation uses a linear beta(t) with alpha(t) = exp(-1/2 int_0^t beta).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ScheduleDomainError

VP = "VP"
VE = "VE"

# Slack for floating-point endpoints in domain checks.
_DOMAIN_TOL = 1e-12


@dataclass(frozen=True)
class NoiseSchedule:
    """Noise schedule on [t_min, T].

    kind      "VE": alpha = 1, sigma(t) = t (so sigma_min = t_min, sigma_max = T).
              "VP": beta(t) = beta_min + (beta_max - beta_min) t,
                    alpha(t) = exp(-1/4 (beta_max - beta_min) t^2 - 1/2 beta_min t),
                    sigma(t)^2 = 1 - alpha(t)^2.
    """

    kind: str = VE
    t_min: float = 1e-3
    T: float = 1.0
    beta_min: float = 0.1
    beta_max: float = 20.0

    def __post_init__(self):
        if self.kind not in (VP, VE):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if not (0.0 < self.t_min < self.T):
            raise ConfigError(f"need 0 < t_min < T, got t_min={self.t_min}, T={self.T}")
        if self.kind == VP and not (0.0 < self.beta_min <= self.beta_max):
            raise ConfigError("VP needs 0 < beta_min <= beta_max")

    def check_time(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t_min - _DOMAIN_TOL) or np.any(t > self.T + _DOMAIN_TOL):
            raise ScheduleDomainError(
                f"t outside [{self.t_min}, {self.T}]: {t}"
            )
        return t

    def _beta(self, t):
        return self.beta_min + (self.beta_max - self.beta_min) * t

    def alpha(self, t):
        t = self.check_time(t)
        if self.kind == VE:
            return np.ones_like(t)
        return np.exp(-0.25 * (self.beta_max - self.beta_min) * t**2 - 0.5 * self.beta_min * t)

    def sigma(self, t):
        t = self.check_time(t)
        if self.kind == VE:
            return t
        return np.sqrt(1.0 - self.alpha(t) ** 2)

    def snr(self, t):
        """Signal-to-noise ratio alpha(t)^2 / sigma(t)^2; strictly decreasing in t."""
        return self.alpha(t) ** 2 / self.sigma(t) ** 2

    def snr_ratio(self, t):
        """SNR_T / SNR_t, in (0, 1] and equal to 1 exactly at t = T."""
        return self.snr(self.T) / self.snr(t)

    def drift_diffusion(self, a_t, t):
        """SDE coefficients (f, g^2) at time t.

        VE: f = 0,                       g^2 = d sigma^2/dt = 2t
        VP: f = (d log alpha/dt) a_t,    g^2 = d sigma^2/dt - 2 (d log alpha/dt) sigma^2 = beta(t)
        """
        t = self.check_time(t)
        a_t = np.asarray(a_t, dtype=float)
        if self.kind == VE:
            return np.zeros_like(a_t), 2.0 * t
        dlog_alpha = -0.5 * self._beta(t)
        return dlog_alpha * a_t, self._beta(t)
