"""Acceptance criteria: one callable per criterion, each returning a result
record with its pass/fail verdict, measured quantities, and runtime.

Tolerances are pinned here, not in the callers. The `verify` CLI subcommand
and the acceptance test module both run this registry.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import energy_distance, paired_displacement, rig_sweep
from .density import log_density_ode, lambda_via_ode
from .dsm import rms_score_error
from .editing import (FULL_TAU_GRID, FULL_TE_GRID, REDUCED_TAU_GRID, REDUCED_TE_GRID,
                      EditTask, cycle_decode, cycle_encode, directional_score,
                      edit_grid, hyperparameter_search, make_edit_guidance)
from .expert_pipeline import evaluate_arms, run_expert_guidance
from .guidance import (ContrastiveTerm, GuidanceSpec, PiecewiseSchedule, cfg_score,
                       compose, lambda_exact, world_family)
from .samplers import sample
from .schedule import NoiseSchedule, TimeGrid
from .worlds import (EMPTY, World, gaussian_world, isotropic_mixture,
                     random_mixture_world, rejection_sample_tilted,
                     rig_world, standard_normal_world, two_factor_world,
                     two_prompt_world)

SCHED = NoiseSchedule()


@dataclass
class CriterionResult:
    index: int
    name: str
    passed: bool
    seconds: float
    limit_seconds: float | None
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.index}: {self.name} ({self.seconds:.1f}s)"

    def to_dict(self) -> dict:
        return {"index": self.index, "name": self.name, "passed": self.passed,
                "seconds": round(self.seconds, 3), "limit_seconds": self.limit_seconds,
                "details": self.details}


def _finish(index, name, started, limit, passed, details) -> CriterionResult:
    seconds = time.perf_counter() - started
    if limit is not None and seconds >= limit:
        passed = False
        details["runtime_exceeded"] = seconds
    return CriterionResult(index, name, bool(passed), seconds, limit, details)


# ---------------------------------------------------------------------------
# 1. Gradient identity of the tilted density.

def criterion_1() -> CriterionResult:
    started = time.perf_counter()
    rng = np.random.default_rng(101)
    gammas = (0.5, 1.0, 2.0, 4.0)
    prior_choices = (0.3, 0.5, 0.7)
    max_rel = 0.0
    for _ in range(200):
        world = random_mixture_world(rng, d=int(rng.integers(1, 4)))
        d = world.dimension
        y_pos, y_neg = ("p0",), ("p1",)
        gamma = float(rng.choice(gammas))
        p_pos = float(rng.choice(prior_choices))
        priors = (p_pos, 1.0 - p_pos)
        t = float(rng.uniform(0.05, 0.95))
        x = world.marginal_params(EMPTY, t, SCHED).sample(1, rng)[0]

        def tilted_logp(xx):
            lp = world.log_density(EMPTY, xx, t, SCHED)
            lc_p = np.log(priors[0]) + gamma * world.log_density(y_pos, xx, t, SCHED)
            lc_n = np.log(priors[1]) + gamma * world.log_density(y_neg, xx, t, SCHED)
            return lp + lc_p - np.logaddexp(lc_p, lc_n)

        fd = np.empty(d)
        for i in range(d):
            h = 1e-5 * (1.0 + abs(x[i]))
            e = np.zeros(d)
            e[i] = h
            fd[i] = (tilted_logp(x + e) - tilted_logp(x - e)) / (2.0 * h)
        lam = lambda_exact(y_pos, y_neg, gamma, priors, x, t, world, SCHED)
        analytic = (world.score(EMPTY, x, t, SCHED)
                    + lam * (world.score(y_pos, x, t, SCHED)
                             - world.score(y_neg, x, t, SCHED)))
        rel = float(np.linalg.norm(fd - analytic) / max(np.linalg.norm(analytic), 1e-8))
        max_rel = max(max_rel, rel)
    return _finish(1, "derivation identity", started, 10.0,
                   max_rel <= 1e-4, {"max_relative_error": max_rel, "tolerance": 1e-4})


# ---------------------------------------------------------------------------
# 2. Flow-ODE log-density vs closed form, plus convergence order.
#
# The terminal condition approximates p_T by N(0, I); that mismatch scales
# with alpha_T times the mixture mean, so the criterion worlds are centered
# (or nearly so), where the residual bias is far below the tolerance.

def _centered_worlds():
    return [
        ("standard-normal", standard_normal_world(1), ("base",)),
        ("centered-mix-1d", World(1, {("mix",): isotropic_mixture(
            [0.5, 0.5], [[-1.5], [1.5]])}, {("mix",): 1.0}), ("mix",)),
        ("centered-mix-2d", World(2, {("mix",): isotropic_mixture(
            [0.5, 0.5], [[-1.2, 0.8], [1.2, -0.8]])}, {("mix",): 1.0}), ("mix",)),
        ("small-mean", gaussian_world([0.03]), ("target",)),
    ]


def criterion_2() -> CriterionResult:
    started = time.perf_counter()
    rng = np.random.default_rng(202)
    max_err = 0.0
    n_points = 0
    for _, world, prompt in _centered_worlds():
        for _ in range(5):
            t = float(rng.uniform(0.05, 0.95))
            x = world.marginal_params(prompt, t, SCHED).sample(5, rng)
            est = log_density_ode(prompt, x, t, SCHED, world=world, n_steps=512)
            exact = world.log_density(prompt, x, t, SCHED)
            max_err = max(max_err, float(np.max(np.abs(est.log_density - exact))))
            n_points += x.shape[0]

    # self-convergence order (shared terminal bias cancels in differences)
    world = _centered_worlds()[1][1]
    x = world.marginal_params(("mix",), 0.3, SCHED).sample(10, rng)
    ref = log_density_ode(("mix",), x, 0.3, SCHED, world=world, n_steps=2048).log_density
    errs = {}
    for n_steps in (64, 128, 256):
        est = log_density_ode(("mix",), x, 0.3, SCHED, world=world, n_steps=n_steps)
        errs[n_steps] = float(np.max(np.abs(est.log_density - ref)))
    slopes = [np.log2(errs[64] / errs[128]), np.log2(errs[128] / errs[256])]
    order = float(min(slopes))
    passed = max_err <= 1e-3 and order >= 1.75
    return _finish(2, "density ODE accuracy and order", started, 30.0, passed,
                   {"max_abs_error": max_err, "tolerance": 1e-3, "n_points": n_points,
                    "observed_order": order, "order_floor": 1.75,
                    "errors_by_steps": errs})


# ---------------------------------------------------------------------------
# 3. ODE-estimated contrastive coefficient vs the analytic one.

def criterion_3() -> CriterionResult:
    started = time.perf_counter()
    rng = np.random.default_rng(303)
    world = World(1, {
        ("wide",): isotropic_mixture([1.0], [[0.0]], 1.44),
        ("peaks",): isotropic_mixture([0.5, 0.5], [[-1.0], [1.0]], 0.5),
    }, {("wide",): 0.5, ("peaks",): 0.5})
    gamma = 1.0
    max_gap = 0.0
    for t in (0.15, 0.3, 0.5, 0.7, 0.85):
        x = world.marginal_params(EMPTY, t, SCHED).sample(10, rng)
        lam_ode = lambda_via_ode(("wide",), ("peaks",), gamma, None, x, t, world,
                                 SCHED, n_steps=512)
        lam_an = lambda_exact(("wide",), ("peaks",), gamma, None, x, t, world, SCHED)
        max_gap = max(max_gap, float(np.max(np.abs(lam_ode - lam_an))))
    return _finish(3, "ODE lambda vs analytic lambda", started, 60.0,
                   max_gap <= 2e-3, {"max_abs_gap": max_gap, "tolerance": 2e-3,
                                     "n_points": 50})


# ---------------------------------------------------------------------------
# 4. Exact reductions.

def criterion_4() -> CriterionResult:
    started = time.perf_counter()
    world = two_prompt_world()
    family = world_family(world, SCHED)
    rng = np.random.default_rng(404)
    details = {}

    base_spec = GuidanceSpec(base_kind="prompt", base_prompt=("right",))
    zero_spec = GuidanceSpec(base_kind="prompt", base_prompt=("right",), terms=(
        ContrastiveTerm(("right",), ("left",), lam=PiecewiseSchedule.constant(0.0)),))
    grid = TimeGrid.uniform(100)
    t_base = sample(compose(base_spec, world, SCHED), grid, SCHED, "em_sde",
                    seed=11, n=64, d=1)
    t_zero = sample(compose(zero_spec, world, SCHED), grid, SCHED, "em_sde",
                    seed=11, n=64, d=1)
    details["lambda0_bit_identical"] = bool(np.array_equal(t_base.x_final, t_zero.x_final))

    x = rng.standard_normal((32, 1))
    same_spec = GuidanceSpec(base_kind="prompt", base_prompt=("right",), terms=(
        ContrastiveTerm(("right",), ("right",), lam=PiecewiseSchedule.constant(3.0)),))
    term = compose(same_spec, world, SCHED)(x, 0.4) - compose(base_spec, world, SCHED)(x, 0.4)
    details["same_prompt_term_zero"] = bool(np.all(term == 0.0))

    lam = 2.5
    equiv_spec = GuidanceSpec(base_kind="prompt", base_prompt=("right",), terms=(
        ContrastiveTerm(("right",), EMPTY, lam=PiecewiseSchedule.constant(lam)),))
    lhs = compose(equiv_spec, world, SCHED)(x, 0.6)
    rhs = cfg_score(family, ("right",), 1.0 + lam, x, 0.6)
    details["cfg_equivalence_exact"] = bool(np.array_equal(lhs, rhs))

    lam0 = lambda_exact(("right",), ("left",), 0.0, None, rng.standard_normal((50, 1)),
                        0.3, world, SCHED)
    details["gamma0_lambda_zero"] = bool(np.all(lam0 == 0.0))

    passed = all(details.values())
    return _finish(4, "exact reductions", started, 30.0, passed, details)


# ---------------------------------------------------------------------------
# 5. Disentanglement ordering under shared noise.

def criterion_5() -> CriterionResult:
    """Both arms are calibrated to the same mean concept displacement (the
    same intended edit); the comparison is then over total displacement."""
    started = time.perf_counter()
    world = two_factor_world()
    y_pos, y_neg = ("subject", "accessory"), ("subject",)
    base = world.score_field(y_neg, SCHED)
    family = world_family(world, SCHED)
    tau = 2.0

    def cfg_style(x, t):
        return base(x, t) + tau * (family(y_pos, x, t) - family(EMPTY, x, t))

    grid = TimeGrid.uniform(300)
    stats_g = paired_displacement(base, cfg_style, n=1000, d=2, grid=grid,
                                  sched=SCHED, seed=55)

    # the contrastive term is constant in x here (alpha_t (4, 0)), so its
    # endpoint displacement is lam * 4 * (alpha_eps - alpha_T^2/alpha_eps);
    # invert that to match the CFG arm's concept displacement
    a_T, _ = SCHED.alpha_sigma(grid.t_start)
    a_eps, _ = SCHED.alpha_sigma(grid.t_end)
    lam = float(stats_g.per_coord_mean_abs[0] / (4.0 * (a_eps - a_T * a_T / a_eps)))

    def contrastive(x, t):
        return base(x, t) + lam * (family(y_pos, x, t) - family(y_neg, x, t))

    stats_c = paired_displacement(base, contrastive, n=1000, d=2, grid=grid,
                                  sched=SCHED, seed=55)
    off_ratio = float(stats_c.per_coord_mean_abs[1]
                      / max(stats_c.per_coord_mean_abs[0], 1e-12))
    passed = (stats_c.mean_l2 < stats_g.mean_l2) and (off_ratio <= 1e-2)
    return _finish(5, "disentanglement ordering", started, 60.0, passed, {
        "matched_lambda": lam,
        "contrastive_mean_l2": stats_c.mean_l2,
        "cfg_mean_l2": stats_g.mean_l2,
        "contrastive_per_coord_mean_abs": stats_c.per_coord_mean_abs.tolist(),
        "cfg_per_coord_mean_abs": stats_g.per_coord_mean_abs.tolist(),
        "contrastive_off_concept_ratio": off_ratio,
        "n_pairs": 1000})


# ---------------------------------------------------------------------------
# 6. Strength sweep against the closed-form linear-SDE endpoint mean.

SWEEP_LAMBDAS = (-8.0, -4.0, 0.0, 4.0, 8.0)


def criterion_6() -> CriterionResult:
    started = time.perf_counter()
    world = rig_world(delta=0.5)
    template = GuidanceSpec(base_kind="prompt", base_prompt=("scene",), terms=(
        ContrastiveTerm(("scene", "bright"), ("scene", "dark"),
                        lam=PiecewiseSchedule.constant(1.0)),))
    grid = TimeGrid.uniform(4000)
    result = rig_sweep(template, world, SCHED, SWEEP_LAMBDAS, n=1000, grid=grid, seed=66)

    # closed form: the composed field is the exact score of N(lam * delta_vec, I),
    # whose linear reverse SDE has endpoint mean nu (alpha_eps - alpha_T^2/alpha_eps)
    a_T, _ = SCHED.alpha_sigma(grid.t_start)
    a_eps, _ = SCHED.alpha_sigma(grid.t_end)
    factor = float(a_eps - a_T * a_T / a_eps)
    delta_vec = np.array([1.0, 0.0])  # mu+ - mu- for delta = 0.5
    predictions = np.array([lam * delta_vec * factor for lam in SWEEP_LAMBDAS])

    concept = result.means[:, 0]
    concept_se = result.std_errors[:, 0]
    monotone = bool(np.all(np.diff(concept) > 0))
    within = bool(np.all(np.abs(concept - predictions[:, 0]) <= 3.0 * concept_se))
    off_gap = float(result.means[:, 1].max() - result.means[:, 1].min())
    off_se = float(result.std_errors[:, 1].max())
    off_invariant = off_gap <= 3.0 * off_se
    passed = monotone and within and off_invariant
    return _finish(6, "rig sweep vs closed form", started, 60.0, passed, {
        "lambdas": list(SWEEP_LAMBDAS),
        "concept_means": concept.tolist(),
        "concept_predictions": predictions[:, 0].tolist(),
        "concept_std_errors": concept_se.tolist(),
        "monotone": monotone, "within_3se": within,
        "off_concept_max_gap": off_gap, "off_concept_invariant": off_invariant})


# ---------------------------------------------------------------------------
# 7. Guidance moves samples toward the tilted target.

def criterion_7() -> CriterionResult:
    """Directional only: the constant coefficient is calibrated (0.25) since
    on this world a large constant over-tilts past the target; the exact
    x-dependent coefficient is run as a second arm and lands on the target
    almost exactly (for gamma = 1 and equal priors the tilted density is the
    positive conditional itself, with a time-independent normalizer)."""
    started = time.perf_counter()
    world = two_prompt_world()
    target = rejection_sample_tilted(world, SCHED, ("right",), ("left",), gamma=1.0,
                                     n=10_000, seed=77)
    grid = TimeGrid.uniform(1000)
    base_spec = GuidanceSpec(base_kind="prompt", base_prompt=EMPTY)
    guided_spec = GuidanceSpec(base_kind="prompt", base_prompt=EMPTY, terms=(
        ContrastiveTerm(("right",), ("left",), lam=PiecewiseSchedule.constant(0.25)),))
    exact_spec = GuidanceSpec(base_kind="prompt", base_prompt=EMPTY, terms=(
        ContrastiveTerm(("right",), ("left",), gamma=PiecewiseSchedule.constant(1.0)),))
    unguided = sample(compose(base_spec, world, SCHED), grid, SCHED, "em_sde",
                      seed=78, n=10_000, d=1).x_final
    guided = sample(compose(guided_spec, world, SCHED), grid, SCHED, "em_sde",
                    seed=78, n=10_000, d=1).x_final
    guided_exact = sample(compose(exact_spec, world, SCHED), grid, SCHED, "em_sde",
                          seed=78, n=10_000, d=1).x_final
    ed_guided = energy_distance(guided, target)
    ed_exact = energy_distance(guided_exact, target)
    ed_unguided = energy_distance(unguided, target)
    passed = ed_guided < ed_unguided and ed_exact < ed_unguided
    return _finish(7, "tilted-target direction", started, 120.0, passed,
                   {"energy_guided_vs_target": ed_guided,
                    "energy_exact_lambda_vs_target": ed_exact,
                    "energy_unguided_vs_target": ed_unguided,
                    "constant_lambda": 0.25, "n": 10_000})


# ---------------------------------------------------------------------------
# 8. Editing: exact cycle identity, contrastive decode wins, reduced search grid.

def criterion_8() -> CriterionResult:
    started = time.perf_counter()
    world = two_factor_world()
    y_src, y_tgt = ("subject",), ("subject", "accessory")
    rng = np.random.default_rng(808)
    details = {}

    # (a) decode(encode(x0)) = x0 under matched prompt and guidance
    x0 = world.sample(y_src, 64, rng)
    grid = edit_grid(0.4, 100)
    x_te, record = cycle_encode(x0, y_src, 0.4, grid, SCHED, eta=0.1, seed=81,
                                world=world)
    recon = cycle_decode(x_te, record, y_src,
                         make_edit_guidance(y_src, y_src, tau=1.0, lam=0.0),
                         grid, SCHED, eta=0.1, world=world)
    identity_err = float(np.max(np.abs(recon - x0)))
    details["cycle_identity_max_err"] = identity_err

    # (b) contrastive decode beats plain decode on the directional selector
    n_tasks = 200
    x0 = world.sample(y_src, n_tasks, rng)
    x_te, record = cycle_encode(x0, y_src, 0.4, grid, SCHED, eta=0.1, seed=82,
                                world=world)
    out0 = cycle_decode(x_te, record, y_tgt,
                        make_edit_guidance(y_tgt, y_src, tau=1.0, lam=0.0),
                        grid, SCHED, eta=0.1, world=world)
    out6 = cycle_decode(x_te, record, y_tgt,
                        make_edit_guidance(y_tgt, y_src, tau=1.0, lam=6.0),
                        grid, SCHED, eta=0.1, world=world)
    s0 = directional_score(out0, x0, y_src, y_tgt, world)
    s6 = directional_score(out6, x0, y_src, y_tgt, world)
    win_rate = float(np.mean(s6 > s0))
    details["lambda6_win_rate"] = win_rate

    # (c) reduced search grid with the contrastive term keeps up with the
    # full-grid plain baseline
    n_search = 50
    wins = 0
    for i in range(n_search):
        source = world.sample(y_src, 1, rng)[0]
        task = EditTask(source, y_src, y_tgt, t_e=0.4,
                        guidance=make_edit_guidance(y_tgt, y_src))
        full = hyperparameter_search(task, "sdedit", FULL_TAU_GRID, FULL_TE_GRID,
                                     trials=15, world=world, sched=SCHED,
                                     seed=8300 + i, lam=0.0)
        reduced = hyperparameter_search(task, "sdedit", REDUCED_TAU_GRID,
                                        REDUCED_TE_GRID, trials=15, world=world,
                                        sched=SCHED, seed=8300 + i, lam=10.0)
        if reduced.best_row.selector >= full.best_row.selector:
            wins += 1
    reduced_rate = wins / n_search
    details["reduced_grid_match_rate"] = reduced_rate

    passed = identity_err <= 1e-6 and win_rate >= 0.90 and reduced_rate >= 0.50
    return _finish(8, "editing identities and orderings", started, 300.0, passed, details)


# ---------------------------------------------------------------------------
# 9. Learned models: score accuracy and the four-arm orderings.

def _arm_orderings(report) -> dict:
    ed = {arm: report.arms[arm]["energy_to_domain"].value for arm in report.arms}
    cls = {arm: report.arms[arm]["mean_concept_score"].value for arm in report.arms}
    return {
        "energy_to_domain": ed,
        "concept_score": cls,
        # prompt-alignment analog: the contrastive arm leads all four arms
        "concept_best": bool(cls["contrastive"] > max(
            cls["expert_only"], cls["cfg_positive"], cls["negative"])),
        # domain-fit analog: the contrastive arm leads the guided arms (the
        # unguided expert samples the reference distribution by construction)
        "domain_best_guided": bool(ed["contrastive"] < min(
            ed["cfg_positive"], ed["negative"])),
        "negative_not_above_contrastive": bool(cls["negative"] <= cls["contrastive"]),
    }


def criterion_9() -> CriterionResult:
    started = time.perf_counter()
    world = two_factor_world()
    y_pos, y_neg = ("subject", "accessory"), ("subject",)
    details = {}

    analytic = evaluate_arms(world.score_field(y_neg, SCHED),
                             world_family(world, SCHED), world, SCHED,
                             domain_prompt=y_neg, y_pos=y_pos, y_neg=y_neg,
                             lam=2.0, tau=2.0, n=2000,
                             grid=TimeGrid.uniform(300), seed=91)
    details["analytic"] = _arm_orderings(analytic)

    learned = run_expert_guidance(world, y_neg, y_pos, y_neg, lam=2.0,
                                  budget=5000, seed=92, sched=SCHED, tau=2.0,
                                  n=2000, n_sampler_steps=300, expert_budget=4000)
    details["learned"] = _arm_orderings(learned)
    details["generalist_rms"] = learned.generalist_rms
    details["expert_rms"] = learned.expert_rms

    rms_ok = learned.generalist_rms <= 0.1 and learned.expert_rms <= 0.1
    orderings_ok = all(details[key][flag] for key in ("analytic", "learned")
                       for flag in ("concept_best", "domain_best_guided",
                                    "negative_not_above_contrastive"))
    details["rms_tolerance"] = 0.1
    passed = rms_ok and orderings_ok
    return _finish(9, "learned-model orderings and score accuracy", started,
                   600.0, passed, details)


CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
}


def run_criteria(indices=None, echo=print) -> list[CriterionResult]:
    results = []
    for index in sorted(indices or CRITERIA):
        result = CRITERIA[index]()
        results.append(result)
        if echo is not None:
            echo(result.line())
    return results
