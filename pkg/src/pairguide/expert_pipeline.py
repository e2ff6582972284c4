"""Guiding a domain expert with a prompt-conditioned generalist.

Four arms share one noise stream: the raw expert, the expert pushed toward
the positive prompt against the empty prompt (classifier-free style), the
expert pushed away from the baseline prompt (negation), and the expert with
the contrastive prompt-pair term. Each arm reports an energy distance to
the domain distribution (realism analog) and the mean target-vs-baseline
log-likelihood gap (prompt-alignment analog).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analysis import (MetricReport, bootstrap_half_width,
                       contrastive_likelihood_score, energy_distance)
from .dsm import LearnedScoreModel, finetune_expert, rms_score_error, train_dsm
from .guidance import (CfgTerm, ContrastiveTerm, GuidanceSpec, NegativeTerm,
                       PiecewiseSchedule, PromptFamily, world_family)
from .samplers import ScoreField, sample
from .schedule import NoiseSchedule, TimeGrid
from .worlds import World, canonical_prompt

ARMS = ("expert_only", "cfg_positive", "negative", "contrastive")


def arm_specs(y_pos, y_neg, lam: float, tau: float) -> dict[str, GuidanceSpec]:
    y_pos = canonical_prompt(y_pos)
    y_neg = canonical_prompt(y_neg)
    base = dict(base_kind="field", base_name="expert")
    tau_s = PiecewiseSchedule.constant(tau)
    return {
        "expert_only": GuidanceSpec(**base),
        "cfg_positive": GuidanceSpec(**base, terms=(CfgTerm(y_pos, tau_s),)),
        "negative": GuidanceSpec(**base, terms=(NegativeTerm(y_neg, tau_s),)),
        "contrastive": GuidanceSpec(**base, terms=(ContrastiveTerm(
            y_pos, y_neg, lam=PiecewiseSchedule.constant(lam)),)),
    }


@dataclass
class ExpertGuidanceReport:
    arms: dict[str, dict[str, MetricReport]]
    samples: dict[str, np.ndarray]
    generalist_rms: float | None = None
    expert_rms: float | None = None

    def table(self) -> list[dict]:
        rows = []
        for arm in ARMS:
            rows.append({
                "arm": arm,
                "energy_to_domain": self.arms[arm]["energy_to_domain"].value,
                "mean_concept_score": self.arms[arm]["mean_concept_score"].value,
                "concept_ci_half_width": self.arms[arm]["mean_concept_score"].ci_half_width,
            })
        return rows


def evaluate_arms(expert_field: ScoreField, family: PromptFamily, world: World,
                  sched: NoiseSchedule, domain_prompt, y_pos, y_neg, lam: float,
                  tau: float, n: int, grid: TimeGrid, seed: int,
                  sampler: str = "em_sde") -> ExpertGuidanceReport:
    from .guidance import compose

    domain_key = canonical_prompt(domain_prompt)
    rng = np.random.default_rng(seed)
    domain_ref = world.sample(domain_key, n, rng)

    specs = arm_specs(y_pos, y_neg, lam, tau)
    arms: dict[str, dict[str, MetricReport]] = {}
    samples: dict[str, np.ndarray] = {}
    for arm, spec in specs.items():
        field = compose(spec, world, sched, family=family,
                        extra_fields={"expert": expert_field})
        traj = sample(field, grid, sched, sampler, seed=seed, n=n, d=world.dimension)
        x = traj.x_final
        samples[arm] = x
        cls = contrastive_likelihood_score(x, y_pos, y_neg, world)
        arms[arm] = {
            "energy_to_domain": MetricReport(
                "energy_to_domain", energy_distance(x, domain_ref), n, seed),
            "mean_concept_score": MetricReport(
                "mean_concept_score", float(np.mean(cls)), n, seed,
                ci_half_width=bootstrap_half_width(cls, seed=seed)),
        }
    return ExpertGuidanceReport(arms=arms, samples=samples)


def run_expert_guidance(world: World, domain_prompt, y_pos, y_neg, lam: float,
                        budget: int, seed: int, sched: NoiseSchedule,
                        tau: float = 2.0, n: int = 2000, n_sampler_steps: int = 400,
                        use_learned: bool = True,
                        expert_budget: int | None = None) -> ExpertGuidanceReport:
    """Train (or substitute analytically) the generalist and expert, then
    compare the four guidance arms on identical noise streams."""
    grid = TimeGrid.uniform(n_sampler_steps)
    if use_learned:
        train_prompts = list(world.leaf_prompts)
        generalist = train_dsm(world, train_prompts, sched, budget, seed)
        expert = finetune_expert(generalist, world, domain_prompt,
                                 expert_budget if expert_budget is not None else budget,
                                 seed + 10)
        expert_field = expert.score_field(())
        family = generalist.family(sched)
        report = evaluate_arms(expert_field, family, world, sched, domain_prompt,
                               y_pos, y_neg, lam, tau, n, grid, seed)
        report.generalist_rms = rms_score_error(
            generalist.score_field(y_pos), world, y_pos, sched, seed=seed)
        report.expert_rms = rms_score_error(
            expert_field, world, domain_prompt, sched, seed=seed + 1)
        return report
    expert_field = world.score_field(domain_prompt, sched)
    family = world_family(world, sched)
    return evaluate_arms(expert_field, family, world, sched, domain_prompt,
                         y_pos, y_neg, lam, tau, n, grid, seed)
