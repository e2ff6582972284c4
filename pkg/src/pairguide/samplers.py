"""Reverse-time samplers driven by an arbitrary score field.

Three samplers share one loop:

* ``em_sde``   Euler-Maruyama on the reverse SDE
               dx = [f - g^2 s] dt + g dw_bar.
* ``pf_ode``   Heun (2nd order) on the probability-flow ODE
               dx = [f - 1/2 g^2 s] dt, which shares the SDE's marginals.
* ``ddim``     Discrete update with stochasticity knob eta; eta = 0 is
               deterministic, eta > 0 re-injects noise each step.

A score field is any callable ``(x, t) -> array`` mapping a batch of states
``(n, d)`` at scalar time ``t`` to score vectors of the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, NumericsError
from .schedule import NoiseSchedule, TimeGrid

ScoreField = Callable[[np.ndarray, float], np.ndarray]

SAMPLERS = ("em_sde", "pf_ode", "ddim")


@dataclass
class NoiseRecord:
    """Per-step standard-normal draws, indexed like the grid's steps.

    Replaying a record against a different score field consumes identical
    noise at every step, which is what paired-trajectory comparisons need.
    """

    z: np.ndarray  # (n_steps, n, d)

    @property
    def n_steps(self) -> int:
        return self.z.shape[0]


@dataclass
class Trajectory:
    times: np.ndarray
    x_final: np.ndarray  # (n, d)
    states: np.ndarray | None = None  # (n_steps + 1, n, d) when stored
    noise_record: NoiseRecord | None = None


def drift(x, t: float, sched: NoiseSchedule):
    """Forward drift f(x, t) = -1/2 beta(t) x."""
    return -0.5 * sched.beta(t) * x


def reverse_sde_step(x, t: float, dt: float, score: ScoreField, sched: NoiseSchedule, noise):
    """One Euler-Maruyama step of the reverse SDE (dt < 0).

    x' = x + [-1/2 beta x - beta s(x, t)] dt + sqrt(beta |dt|) z.
    """
    if dt >= 0:
        raise ConfigError("reverse_sde_step needs dt < 0")
    x = np.asarray(x, dtype=float)
    beta = sched.beta(t)
    s = np.asarray(score(x, t), dtype=float)
    if not np.all(np.isfinite(s)):
        raise NumericsError("score returned non-finite values", t=t)
    return x + (-0.5 * beta * x - beta * s) * dt + np.sqrt(beta * (-dt)) * np.asarray(noise)


def pf_ode_drift(x, t: float, score: ScoreField, sched: NoiseSchedule):
    """Probability-flow drift f - 1/2 g^2 s = -1/2 beta(t) (x + s(x, t))."""
    return -0.5 * sched.beta(t) * (x + np.asarray(score(x, t), dtype=float))


def pf_ode_step(x, t: float, dt: float, score: ScoreField, sched: NoiseSchedule):
    """One Heun step of the probability-flow ODE.

    dt < 0 denoises; dt > 0 integrates toward T, which inverts the flow.
    """
    if dt == 0:
        raise ConfigError("pf_ode_step needs dt != 0")
    x = np.asarray(x, dtype=float)
    k1 = pf_ode_drift(x, t, score, sched)
    k2 = pf_ode_drift(x + dt * k1, t + dt, score, sched)
    out = x + 0.5 * dt * (k1 + k2)
    if not np.all(np.isfinite(out)):
        raise NumericsError("non-finite state after ODE step", t=t)
    return out


def ddim_coefficients(t: float, t_next: float, sched: NoiseSchedule, eta: float):
    """Coefficients (alpha', dir_coeff, noise_coeff) of the ddim update t -> t_next."""
    a, s = sched.alpha_sigma(t)
    a2, s2 = sched.alpha_sigma(t_next)
    # sigma_tilde^2 = s2^2/s^2 (s^2 - a^2 s2^2 / a2^2); in (0, s2^2) for t_next < t
    sig_tilde_sq = (s2 * s2) / (s * s) * (s * s - (a * a) * (s2 * s2) / (a2 * a2))
    sig_tilde_sq = max(float(sig_tilde_sq), 0.0)
    noise_coeff = eta * np.sqrt(sig_tilde_sq)
    dir_coeff = np.sqrt(max(float(s2 * s2 - noise_coeff * noise_coeff), 0.0))
    return float(a2), float(dir_coeff), float(noise_coeff)


def ddim_step(x, t: float, t_next: float, score: ScoreField, sched: NoiseSchedule,
              eta: float, noise):
    """One stochastic-DDIM step from t to t_next < t.

    eps_hat = -sigma_t s(x, t); x0_hat = (x - sigma_t eps_hat) / alpha_t;
    x' = alpha_t' x0_hat + sqrt(sigma_t'^2 - eta^2 s_tilde^2) eps_hat
         + eta s_tilde z.
    """
    x = np.asarray(x, dtype=float)
    a, s = sched.alpha_sigma(t)
    eps_hat = -s * np.asarray(score(x, t), dtype=float)
    if not np.all(np.isfinite(eps_hat)):
        raise NumericsError("score returned non-finite values", t=t)
    x0_hat = (x - s * eps_hat) / a
    a2, dir_coeff, noise_coeff = ddim_coefficients(t, t_next, sched, eta)
    out = a2 * x0_hat + dir_coeff * eps_hat
    if noise_coeff > 0.0:
        out = out + noise_coeff * np.asarray(noise)
    return out


def sample(score: ScoreField, grid: TimeGrid, sched: NoiseSchedule, sampler: str = "em_sde",
           *, eta: float = 0.1, seed: int | None = None, rng: np.random.Generator | None = None,
           x_init=None, n: int = 1, d: int | None = None, record_noise: bool = False,
           noise_record: NoiseRecord | None = None, store_states: bool = False) -> Trajectory:
    """Integrate the chosen sampler along the grid and return the trajectory.

    The initial state is ``x_init`` (shape ``(n, d)`` or ``(d,)``) or, when
    omitted, a standard-normal draw at ``grid.t_start`` (valid at t = T where
    the forward process has essentially converged to N(0, I)).

    ``noise_record`` replays previously drawn per-step noise instead of
    drawing fresh; ``record_noise`` returns the draws that were consumed.
    (seed, config) -> trajectory is a pure function.
    """
    if sampler not in SAMPLERS:
        raise ConfigError(f"unknown sampler {sampler!r}; choose from {SAMPLERS}")
    if rng is None:
        rng = np.random.default_rng(seed)

    if x_init is None:
        if d is None:
            raise ConfigError("need d (or x_init) to draw the initial state")
        x = rng.standard_normal((n, d))
    else:
        x = np.array(x_init, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        n, d = x.shape

    uses_noise = sampler in ("em_sde", "ddim")
    if noise_record is not None:
        if not uses_noise:
            raise ConfigError(f"{sampler} consumes no noise; record not applicable")
        if noise_record.n_steps != grid.n_steps:
            raise ConfigError(
                f"noise record has {noise_record.n_steps} steps, grid has {grid.n_steps}")
        if noise_record.z.shape[1:] != (n, d):
            raise ConfigError(
                f"noise record shape {noise_record.z.shape[1:]} != batch shape {(n, d)}")

    recorded = np.empty((grid.n_steps, n, d)) if (record_noise and uses_noise) else None
    states = np.empty((grid.n_steps + 1, n, d)) if store_states else None
    if states is not None:
        states[0] = x

    times = grid.times
    for i in range(grid.n_steps):
        t, t_next = float(times[i]), float(times[i + 1])
        dt = t_next - t
        if uses_noise:
            z = noise_record.z[i] if noise_record is not None else rng.standard_normal((n, d))
            if recorded is not None:
                recorded[i] = z
        if sampler == "em_sde":
            x = reverse_sde_step(x, t, dt, score, sched, z)
        elif sampler == "pf_ode":
            x = pf_ode_step(x, t, dt, score, sched)
        else:
            x = ddim_step(x, t, t_next, score, sched, eta, z)
        if not np.all(np.isfinite(x)):
            raise NumericsError("trajectory diverged", step=i, t=t)
        if states is not None:
            states[i + 1] = x

    record = None
    if noise_record is not None:
        record = noise_record
    elif recorded is not None:
        record = NoiseRecord(recorded)
    return Trajectory(times=times.copy(), x_final=x, states=states, noise_record=record)
