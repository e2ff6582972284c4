"""Score-field composition: classifier-free, negative, and contrastive guidance.

All guidance forms are additive corrections on top of a guided base field:

    cfg          s(x,t,y) + (tau_t - 1) (s(x,t,y) - s(x,t,0))
    contrastive  base(x,t) + lambda_t (s(x,t,y+) - s(x,t,y-))
    negative     base(x,t) + tau_t    (s(x,t,0)  - s(x,t,y-))

where 0 denotes the empty prompt. The contrastive coefficient lambda_t is
either a constant (the practical mode) or the exact x-dependent value

    lambda_t(x) = gamma_t (1 - c(x)),
    c(x) = p+ p_t(x|y+)^gamma / (p+ p_t(x|y+)^gamma + p- p_t(x|y-)^gamma),

the binary generative classifier built from the two prompt conditionals.
With the exact coefficient, base score + lambda_t(x) (s+ - s-) equals the
gradient of log[p_t(x) c(x)] identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError
from .samplers import ScoreField
from .schedule import NoiseSchedule
from .worlds import EMPTY, PromptId, World, canonical_prompt

# A prompt family evaluates conditional scores: (prompt, x, t) -> score.
PromptFamily = Callable[[PromptId, np.ndarray, float], np.ndarray]


def world_family(world: World, sched: NoiseSchedule) -> PromptFamily:
    """Prompt family backed by the world's exact conditional scores."""

    def family(prompt, x, t):
        return world.score(prompt, x, t, sched)

    return family


@dataclass(frozen=True)
class PiecewiseSchedule:
    """Piecewise-constant function of t: values[i] on [bounds[i-1], bounds[i])."""

    values: tuple
    bounds: tuple = ()

    def __post_init__(self):
        if len(self.values) != len(self.bounds) + 1:
            raise ConfigError("need exactly one more value than boundary")
        if any(b2 <= b1 for b1, b2 in zip(self.bounds, self.bounds[1:])):
            raise ConfigError("boundaries must be increasing")

    def __call__(self, t: float) -> float:
        return float(self.values[int(np.searchsorted(self.bounds, t, side="right"))])

    @property
    def is_constant(self) -> bool:
        return len(self.values) == 1

    @staticmethod
    def constant(value: float) -> "PiecewiseSchedule":
        return PiecewiseSchedule((float(value),))


def as_schedule(value) -> PiecewiseSchedule:
    if isinstance(value, PiecewiseSchedule):
        return value
    if isinstance(value, dict):
        return PiecewiseSchedule(tuple(value["values"]), tuple(value.get("bounds", ())))
    return PiecewiseSchedule.constant(float(value))


# ---------------------------------------------------------------------------
# Elementary guidance operations.

def cfg_score(family: PromptFamily, y, tau: float, x, t: float):
    """Classifier-free combination tau s(y) - (tau - 1) s(empty).

    Evaluated as s(y) + (tau - 1)(s(y) - s(empty)) so that the contrastive
    reduction with the empty prompt as baseline reproduces it bit for bit.
    """
    s_y = family(canonical_prompt(y), x, t)
    if tau == 1.0:
        return s_y
    return s_y + (tau - 1.0) * (s_y - family(EMPTY, x, t))


def contrastive_score(guided: ScoreField, family: PromptFamily, y_pos, y_neg,
                      lam, x, t: float):
    """guided(x,t) + lambda (s(y+) - s(y-)); lam is a number or (x,t)-callable."""
    base = guided(x, t)
    coeff = lam(x, t) if callable(lam) else float(lam)
    diff = family(canonical_prompt(y_pos), x, t) - family(canonical_prompt(y_neg), x, t)
    if np.ndim(coeff) == 1 and diff.ndim == 2:
        coeff = np.asarray(coeff)[:, None]
    return base + coeff * diff


def negative_score(guided: ScoreField, family: PromptFamily, y_neg, tau: float,
                   x, t: float):
    """guided(x,t) + tau (s(empty) - s(y-)): push away from the baseline prompt."""
    base = guided(x, t)
    if tau == 0.0:
        return base
    return base + tau * (family(EMPTY, x, t) - family(canonical_prompt(y_neg), x, t))


def classifier_logits(y_pos, y_neg, gamma: float, priors, x, t: float,
                      world: World, sched: NoiseSchedule):
    """(log c+, log c-) unnormalized, with c± = p(y±) p_t(x|y±)^gamma."""
    if priors is None:
        priors = (world.prior(y_pos), world.prior(y_neg))
    lp_pos = world.log_density(y_pos, x, t, sched)
    lp_neg = world.log_density(y_neg, x, t, sched)
    return np.log(priors[0]) + gamma * lp_pos, np.log(priors[1]) + gamma * lp_neg


def classifier_prob(y_pos, y_neg, gamma: float, priors, x, t: float,
                    world: World, sched: NoiseSchedule):
    """Posterior probability that noisy x came from y+ rather than y-."""
    lc_pos, lc_neg = classifier_logits(y_pos, y_neg, gamma, priors, x, t, world, sched)
    return np.exp(lc_pos - np.logaddexp(lc_pos, lc_neg))


def lambda_exact(y_pos, y_neg, gamma: float, priors, x, t: float,
                 world: World, sched: NoiseSchedule):
    """Exact x-dependent contrastive coefficient gamma (1 - c(x))."""
    return gamma * (1.0 - classifier_prob(y_pos, y_neg, gamma, priors, x, t, world, sched))


# ---------------------------------------------------------------------------
# Declarative composition.

@dataclass(frozen=True)
class CfgTerm:
    prompt: PromptId
    tau: PiecewiseSchedule

    def to_config(self):
        return {"kind": "cfg", "prompt": list(self.prompt), "tau": list(self.tau.values)}


@dataclass(frozen=True)
class NegativeTerm:
    negative: PromptId
    tau: PiecewiseSchedule

    def to_config(self):
        return {"kind": "negative", "negative": list(self.negative),
                "tau": list(self.tau.values)}


@dataclass(frozen=True)
class ContrastiveTerm:
    positive: PromptId
    negative: PromptId
    lam: PiecewiseSchedule | None = None     # constant / piecewise mode
    gamma: PiecewiseSchedule | None = None   # exact mode when lam is None
    priors: tuple | None = None

    def __post_init__(self):
        if (self.lam is None) == (self.gamma is None):
            raise ConfigError("contrastive term takes exactly one of lam / gamma")

    def to_config(self):
        cfg = {"kind": "contrastive", "positive": list(self.positive),
               "negative": list(self.negative)}
        if self.lam is not None:
            cfg["lambda"] = list(self.lam.values)
        else:
            cfg["gamma"] = list(self.gamma.values)
            if self.priors is not None:
                cfg["priors"] = list(self.priors)
        return cfg


@dataclass(frozen=True)
class GuidanceSpec:
    """One guided base field plus additive guidance terms.

    base_kind is 'prompt' (raw conditional), 'cfg' (classifier-free combined
    conditional), or 'field' (an externally supplied field, e.g. a trained
    domain expert, passed to compose via extra_fields).
    """

    base_kind: str = "prompt"
    base_prompt: PromptId = EMPTY
    base_tau: PiecewiseSchedule = field(default_factory=lambda: PiecewiseSchedule.constant(7.5))
    base_name: str = ""
    terms: tuple = ()

    def to_config(self) -> dict:
        base: dict = {"kind": self.base_kind}
        if self.base_kind == "field":
            base["name"] = self.base_name
        else:
            base["prompt"] = list(self.base_prompt)
            if self.base_kind == "cfg":
                base["tau"] = list(self.base_tau.values)
        return {"base": base, "terms": [term.to_config() for term in self.terms]}

    @staticmethod
    def from_config(config: dict) -> "GuidanceSpec":
        base = config.get("base", {"kind": "prompt", "prompt": []})
        kind = base.get("kind", "prompt")
        terms = []
        for raw in config.get("terms", ()):
            tkind = raw["kind"]
            if tkind == "cfg":
                terms.append(CfgTerm(canonical_prompt(raw["prompt"]), as_schedule(raw["tau"])))
            elif tkind == "negative":
                terms.append(NegativeTerm(canonical_prompt(raw["negative"]),
                                          as_schedule(raw["tau"])))
            elif tkind == "contrastive":
                lam = raw.get("lambda")
                gamma = raw.get("gamma")
                terms.append(ContrastiveTerm(
                    canonical_prompt(raw["positive"]), canonical_prompt(raw["negative"]),
                    lam=None if lam is None else as_schedule(lam),
                    gamma=None if gamma is None else as_schedule(gamma),
                    priors=tuple(raw["priors"]) if "priors" in raw else None))
            else:
                raise ConfigError(f"unknown guidance term kind {tkind!r}")
        return GuidanceSpec(
            base_kind=kind,
            base_prompt=canonical_prompt(base.get("prompt", [])),
            base_tau=as_schedule(base.get("tau", 7.5)),
            base_name=base.get("name", ""),
            terms=tuple(terms))


def compose(spec: GuidanceSpec, world: World, sched: NoiseSchedule,
            family: PromptFamily | None = None,
            extra_fields: dict[str, ScoreField] | None = None) -> ScoreField:
    """Build the composed score field base + sum of terms.

    The sum is evaluated left to right; terms whose coefficient is exactly
    zero at the queried t are skipped entirely, so a switched-off guidance
    run is bit-identical to the base run.
    """
    if family is None:
        family = world_family(world, sched)

    if spec.base_kind == "prompt":
        prompt = spec.base_prompt

        def base(x, t):
            return family(prompt, x, t)
    elif spec.base_kind == "cfg":
        prompt, tau_sched = spec.base_prompt, spec.base_tau

        def base(x, t):
            return cfg_score(family, prompt, tau_sched(t), x, t)
    elif spec.base_kind == "field":
        if not extra_fields or spec.base_name not in extra_fields:
            raise ConfigError(f"base field {spec.base_name!r} not supplied")
        base = extra_fields[spec.base_name]
    else:
        raise ConfigError(f"unknown base kind {spec.base_kind!r}")

    terms = spec.terms

    def composed(x, t):
        out = base(x, t)
        for term in terms:
            if isinstance(term, CfgTerm):
                tau = term.tau(t)
                if tau != 0.0:
                    out = out + tau * (family(term.prompt, x, t) - family(EMPTY, x, t))
            elif isinstance(term, NegativeTerm):
                tau = term.tau(t)
                if tau != 0.0:
                    out = out + tau * (family(EMPTY, x, t) - family(term.negative, x, t))
            elif isinstance(term, ContrastiveTerm):
                if term.lam is not None:
                    lam = term.lam(t)
                    if lam == 0.0:
                        continue
                    coeff = lam
                else:
                    lam_x = lambda_exact(term.positive, term.negative, term.gamma(t),
                                         term.priors, x, t, world, sched)
                    coeff = np.reshape(lam_x, (-1, 1)) if np.ndim(x) > 1 else lam_x
                out = out + coeff * (family(term.positive, x, t)
                                     - family(term.negative, x, t))
            else:
                raise ConfigError(f"unknown term type {type(term).__name__}")
        return out

    return composed
