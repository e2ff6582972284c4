"""Zero-shot editing: noise-and-denoise and cycle-consistent decoding.

Both editors perturb a source vector to an intermediate time t_e and denoise
under the target prompt, optionally with a contrastive term whose positive
prompt is the target text and whose baseline prompt is the source text. The
cycle editor additionally records, step by step, the noise values that make
the stochastic-DDIM update reconstruct the source exactly; replaying them
while decoding under the target prompt preserves everything the edit does
not touch.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import contrastive_likelihood_score
from .errors import ConfigError
from .guidance import (ContrastiveTerm, GuidanceSpec, PiecewiseSchedule, compose)
from .samplers import NoiseRecord, ddim_coefficients, sample
from .schedule import NoiseSchedule, T_FLOOR, TimeGrid, perturb
from .worlds import World, canonical_prompt


def edit_grid(t_e: float, n_steps_full: int = 100, t_end: float = T_FLOOR) -> TimeGrid:
    """Portion of an n-step [T -> t_end] schedule below the encode time t_e."""
    n_steps = max(1, round(n_steps_full * t_e))
    return TimeGrid.uniform(n_steps, t_start=t_e, t_end=t_end)


def make_edit_guidance(y_target, y_source, tau: float = 2.0, lam: float = 0.0) -> GuidanceSpec:
    """Target-conditioned CFG base plus a target-vs-source contrastive term."""
    return GuidanceSpec(
        base_kind="cfg",
        base_prompt=canonical_prompt(y_target),
        base_tau=PiecewiseSchedule.constant(tau),
        terms=(ContrastiveTerm(canonical_prompt(y_target), canonical_prompt(y_source),
                               lam=PiecewiseSchedule.constant(lam)),))


@dataclass
class EditTask:
    x0: np.ndarray
    y_source: tuple
    y_target: tuple
    t_e: float
    guidance: GuidanceSpec
    n_steps_full: int = 100
    eta: float = 0.1

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.y_source = canonical_prompt(self.y_source)
        self.y_target = canonical_prompt(self.y_target)
        if not 0.0 < self.t_e <= 1.0:
            raise ConfigError(f"t_e={self.t_e} outside (0, 1]")

    def grid(self) -> TimeGrid:
        return edit_grid(self.t_e, self.n_steps_full)


def sdedit(task: EditTask, world: World, sched: NoiseSchedule, seed: int,
           sampler: str = "ddim", extra_fields=None) -> np.ndarray:
    """Perturb the source to t_e, then denoise with the composed target field."""
    rng = np.random.default_rng(seed)
    x0 = np.atleast_2d(task.x0)
    x_te = perturb(x0, task.t_e, sched, rng.standard_normal(x0.shape))
    field = compose(task.guidance, world, sched, extra_fields=extra_fields)
    traj = sample(field, task.grid(), sched, sampler, eta=task.eta, rng=rng, x_init=x_te)
    return traj.x_final if task.x0.ndim > 1 else traj.x_final[0]


def cycle_encode(x0, y_source, t_e: float, grid: TimeGrid, sched: NoiseSchedule,
                 eta: float, seed: int, world: World):
    """Noise the source and record the step noises that reconstruct it.

    A source-consistent trajectory is drawn from the Gaussian bridge of the
    stochastic-DDIM family (conditioning each step on the true x0, ending at
    x0 itself), and each step's update under the source-conditioned score is
    solved for the noise z that produces it. Requires eta > 0, otherwise the
    update has no noise channel to solve for.
    """
    if eta <= 0:
        raise ConfigError("cycle encoding needs eta > 0")
    rng = np.random.default_rng(seed)
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n, d = x0.shape
    score = world.score_field(y_source, sched)

    x_te = perturb(x0, t_e, sched, rng.standard_normal((n, d)))
    x = x_te
    zs = np.empty((grid.n_steps, n, d))
    times = grid.times
    for i in range(grid.n_steps):
        t, t_next = float(times[i]), float(times[i + 1])
        a, s = sched.alpha_sigma(t)
        a2, dir_coeff, noise_coeff = ddim_coefficients(t, t_next, sched, eta)
        if i == grid.n_steps - 1:
            x_next = x0
        else:
            eps_implied = (x - a * x0) / s
            x_next = a2 * x0 + dir_coeff * eps_implied \
                + noise_coeff * rng.standard_normal((n, d))
        eps_hat = -s * np.asarray(score(x, t))
        x0_hat = (x - s * eps_hat) / a
        zs[i] = (x_next - a2 * x0_hat - dir_coeff * eps_hat) / noise_coeff
        x = x_next
    return x_te, NoiseRecord(zs)


def cycle_decode(x_te, record: NoiseRecord, y_target, guidance: GuidanceSpec,
                 grid: TimeGrid, sched: NoiseSchedule, eta: float, world: World,
                 extra_fields=None) -> np.ndarray:
    """Decode from x_te reusing the recorded noises; pure in its inputs."""
    x_te = np.atleast_2d(np.asarray(x_te, dtype=float))
    if record.n_steps != grid.n_steps:
        raise ConfigError(f"record has {record.n_steps} steps, grid has {grid.n_steps}")
    field = compose(guidance, world, sched, extra_fields=extra_fields)
    traj = sample(field, grid, sched, "ddim", eta=eta, x_init=x_te, noise_record=record)
    return traj.x_final


def run_cycle_edit(task: EditTask, world: World, sched: NoiseSchedule, seed: int,
                   extra_fields=None) -> np.ndarray:
    """Encode under the source prompt, decode under the target guidance."""
    grid = task.grid()
    x_te, record = cycle_encode(task.x0, task.y_source, task.t_e, grid, sched,
                                task.eta, seed, world)
    out = cycle_decode(x_te, record, task.y_target, task.guidance, grid, sched,
                       task.eta, world, extra_fields=extra_fields)
    return out if np.asarray(task.x0).ndim > 1 else out[0]


def directional_score(x_hat, x0, y_source, y_target, world: World):
    """Selector for edits: gain in target-vs-source likelihood over the source.

    Adding any constant to all candidates leaves the argmax unchanged.
    """
    return (contrastive_likelihood_score(x_hat, y_target, y_source, world)
            - contrastive_likelihood_score(x0, y_target, y_source, world))


@dataclass
class SearchRow:
    method: str
    tau: float
    t_e: float
    trial: int
    selector: float
    fidelity: float  # negative squared distance to the source

    def to_dict(self):
        return {"method": self.method, "tau": self.tau, "t_e": self.t_e,
                "trial": self.trial, "selector": self.selector, "fidelity": self.fidelity}


@dataclass
class SearchReport:
    rows: list
    best_row: SearchRow
    best_x: np.ndarray
    task: EditTask = field(repr=False, default=None)


def hyperparameter_search(task: EditTask, method: str, taus, t_es, trials: int,
                          world: World, sched: NoiseSchedule, seed: int,
                          lam: float | None = None) -> SearchReport:
    """Enumerate (tau, t_e) combinations with several trials each and pick the
    candidate with the highest directional selector score."""
    if not taus or not t_es or trials < 1:
        raise ConfigError("search grids and trial count must be non-empty")
    if method not in ("sdedit", "cycle"):
        raise ConfigError(f"unknown edit method {method!r}")
    x0 = np.asarray(task.x0, dtype=float)
    if x0.ndim != 1:
        raise ConfigError("search operates on a single source vector")
    lam_val = lam
    if lam_val is None:
        term = task.guidance.terms[0] if task.guidance.terms else None
        lam_val = term.lam(0.0) if isinstance(term, ContrastiveTerm) and term.lam else 0.0

    rows: list[SearchRow] = []
    best_row = None
    best_x = None
    combo_index = 0
    for tau in taus:
        for t_e in t_es:
            sub = replace(task, x0=np.tile(x0, (trials, 1)), t_e=float(t_e),
                          guidance=make_edit_guidance(task.y_target, task.y_source,
                                                      tau=float(tau), lam=float(lam_val)))
            combo_seed = int(np.random.SeedSequence((seed, combo_index)).generate_state(1)[0])
            if method == "sdedit":
                edited = sdedit(sub, world, sched, combo_seed)
            else:
                edited = run_cycle_edit(sub, world, sched, combo_seed)
            scores = directional_score(edited, np.tile(x0, (trials, 1)),
                                       task.y_source, task.y_target, world)
            scores = np.atleast_1d(scores)
            for j in range(trials):
                row = SearchRow(method=method, tau=float(tau), t_e=float(t_e), trial=j,
                                selector=float(scores[j]),
                                fidelity=-float(np.sum((edited[j] - x0) ** 2)))
                rows.append(row)
                if best_row is None or row.selector > best_row.selector:
                    best_row, best_x = row, edited[j].copy()
            combo_index += 1
    return SearchReport(rows=rows, best_row=best_row, best_x=best_x, task=task)


# Default search grids: encode times as fractions of T, decode guidance taus.
FULL_TAU_GRID = (1.0, 1.5, 2.0, 3.0, 4.0, 5.0)
FULL_TE_GRID = (0.15, 0.20, 0.25, 0.30, 0.40, 0.50)
REDUCED_TAU_GRID = (1.0, 1.5, 2.0, 3.0)
REDUCED_TE_GRID = (0.30, 0.40, 0.50)
SDEDIT_LAMBDA_DEFAULT = 10.0
CYCLE_LAMBDA_DEFAULT = 6.0
