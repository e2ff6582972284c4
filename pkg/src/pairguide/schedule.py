"""Variance-preserving forward process and time discretization.

The forward SDE is

    dX = -1/2 beta(t) X dt + sqrt(beta(t)) dW,   t in [0, T],

with a linear rate schedule beta(t) = beta_min + t (beta_max - beta_min).
Its perturbation kernel is Gaussian,

    X_t | X_0 = x0  ~  N(alpha_t x0, sigma_t^2 I),

where alpha_t = exp(-1/2 int_0^t beta) and sigma_t^2 = 1 - alpha_t^2, so
alpha_t^2 + sigma_t^2 = 1 exactly at every t.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

# Sampling grids stop at this time instead of 0 to avoid sigma_t = 0
# divisions in learned-model parameterizations.
T_FLOOR = 1e-5


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta(t) schedule of the variance-preserving process."""

    beta_min: float = 0.1
    beta_max: float = 20.0
    T: float = 1.0

    def __post_init__(self):
        if self.beta_min <= 0:
            raise ConfigError("beta_min must be positive")
        if self.beta_max <= self.beta_min:
            raise ConfigError("beta_max must exceed beta_min")
        if self.T <= 0:
            raise ConfigError("T must be positive")

    def beta(self, t):
        """Instantaneous rate beta(t) = beta_min + t (beta_max - beta_min)."""
        return self.beta_min + (self.beta_max - self.beta_min) * np.asarray(t)

    def beta_integral(self, t):
        """int_0^t beta(s) ds = beta_min t + 1/2 (beta_max - beta_min) t^2."""
        t = np.asarray(t)
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t

    def alpha_sigma(self, t):
        """Perturbation coefficients (alpha_t, sigma_t) at time t.

        alpha_t = exp(-1/2 int_0^t beta), sigma_t = sqrt(1 - alpha_t^2).
        Raises for t outside [0, T].
        """
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.T):
            raise ConfigError(f"t={t} outside [0, {self.T}]")
        alpha = np.exp(-0.5 * self.beta_integral(t))
        sigma = np.sqrt(np.maximum(1.0 - alpha * alpha, 0.0))
        return alpha, sigma

    def g(self, t):
        """Diffusion coefficient g(t) = sqrt(beta(t))."""
        return np.sqrt(self.beta(t))

    def to_config(self) -> dict:
        return {"beta_min": self.beta_min, "beta_max": self.beta_max, "T": self.T}


def alpha_sigma(t, sched: NoiseSchedule):
    """Functional form of :meth:`NoiseSchedule.alpha_sigma`."""
    return sched.alpha_sigma(t)


def perturb(x0, t, sched: NoiseSchedule, noise):
    """Apply the perturbation kernel: alpha_t x0 + sigma_t noise.

    `noise` must be a standard-normal draw with the same shape as x0.
    """
    x0 = np.asarray(x0, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if x0.shape != noise.shape:
        raise ConfigError(f"shape mismatch: x0 {x0.shape} vs noise {noise.shape}")
    alpha, sigma = sched.alpha_sigma(t)
    return alpha * x0 + sigma * noise


@dataclass(frozen=True)
class TimeGrid:
    """Strictly decreasing sampling times from t_start down to t_end.

    `times` holds n_steps + 1 knots; step i integrates times[i] -> times[i+1].
    """

    times: np.ndarray = field(repr=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        if times.ndim != 1 or times.size < 2:
            raise ConfigError("grid needs at least two times")
        if np.any(np.diff(times) >= 0):
            raise ConfigError("grid times must be strictly decreasing")

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @staticmethod
    def uniform(n_steps: int, t_start: float = 1.0, t_end: float = T_FLOOR) -> "TimeGrid":
        if n_steps < 1:
            raise ConfigError("n_steps must be positive")
        if not t_end < t_start:
            raise ConfigError("t_end must be below t_start")
        return TimeGrid(np.linspace(t_start, t_end, n_steps + 1))
