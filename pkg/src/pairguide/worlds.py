"""Analytic stand-ins for prompt-conditioned generative models.

A :class:`World` maps symbolic prompts (token tuples) to Gaussian-mixture
distributions over R^d. Under the variance-preserving kernel the perturbed
marginal of each component stays Gaussian,

    N(mu, Sigma)  ->  N(alpha_t mu, alpha_t^2 Sigma + sigma_t^2 I),

so conditional scores and log-densities are available in closed form at
every time t. The empty prompt () is always registered and equals the
prior-weighted mixture of all leaf prompts, which keeps the unconditional
model consistent with the conditionals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, NumericsError, UnknownPromptError
from .samplers import ScoreField
from .schedule import NoiseSchedule

PromptId = tuple[str, ...]
EMPTY: PromptId = ()

_LOG_2PI = float(np.log(2.0 * np.pi))


def canonical_prompt(tokens) -> PromptId:
    """Canonical lookup key: token order is irrelevant to identity."""
    return tuple(sorted(str(t) for t in tokens))


@dataclass
class GaussianMixture:
    """Mixture with positive weights summing to one and PD covariances."""

    weights: np.ndarray  # (K,)
    means: np.ndarray    # (K, d)
    covs: np.ndarray     # (K, d, d)
    # eigendecomposition of each cov; the perturbed covariance
    # alpha^2 Sigma + sigma^2 I shares the eigenvectors.
    eigvals: np.ndarray = field(init=False, repr=False)
    eigvecs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covs = np.asarray(self.covs, dtype=float)
        k, d = self.means.shape
        if self.covs.shape != (k, d, d):
            raise ConfigError(f"covs shape {self.covs.shape} != {(k, d, d)}")
        if self.weights.shape != (k,) or np.any(self.weights <= 0):
            raise ConfigError("weights must be positive, one per component")
        self.weights = self.weights / self.weights.sum()
        vals, vecs = np.linalg.eigh(self.covs)
        if np.any(vals <= 0):
            raise ConfigError("covariances must be positive-definite")
        self.eigvals = vals
        self.eigvecs = vecs

    @property
    def dimension(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def perturbed(self, alpha: float, sigma: float) -> "GaussianMixture":
        """Pushforward through the VP kernel at coefficients (alpha, sigma)."""
        d = self.dimension
        covs = (alpha * alpha) * self.covs + (sigma * sigma) * np.eye(d)
        return GaussianMixture(self.weights.copy(), alpha * self.means, covs)

    def _component_logpdfs(self, x: np.ndarray, alpha: float, sigma: float) -> np.ndarray:
        """(n, K) log N(x; alpha mu_k, alpha^2 Sigma_k + sigma^2 I)."""
        d = self.dimension
        dvals = (alpha * alpha) * self.eigvals + (sigma * sigma)  # (K, d)
        out = np.empty((x.shape[0], self.n_components))
        for k in range(self.n_components):
            y = x - alpha * self.means[k]
            z = y @ self.eigvecs[k]
            maha = np.sum(z * z / dvals[k], axis=-1)
            out[:, k] = -0.5 * (d * _LOG_2PI + np.sum(np.log(dvals[k])) + maha)
        return out

    def log_density(self, x, alpha: float = 1.0, sigma: float = 0.0):
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        comp = self._component_logpdfs(x2, alpha, sigma)
        lp = logsumexp(comp + np.log(self.weights), axis=-1)
        if not np.all(np.isfinite(lp)):
            raise NumericsError("log-density underflowed for all components")
        return lp if np.ndim(x) > 1 else float(lp[0])

    def score(self, x, alpha: float = 1.0, sigma: float = 0.0):
        """Gradient of the perturbed mixture log-density.

        score = sum_k r_k(x) Sigma_{k,t}^{-1} (alpha mu_k - x) with
        responsibilities r_k computed in log-space.
        """
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        comp = self._component_logpdfs(x2, alpha, sigma) + np.log(self.weights)
        norm = logsumexp(comp, axis=-1, keepdims=True)
        if not np.all(np.isfinite(norm)):
            raise NumericsError("all mixture components underflowed")
        resp = np.exp(comp - norm)  # (n, K)
        dvals = (alpha * alpha) * self.eigvals + (sigma * sigma)
        out = np.zeros_like(x2)
        for k in range(self.n_components):
            y = x2 - alpha * self.means[k]
            z = y @ self.eigvecs[k]
            grad_k = -(z / dvals[k]) @ self.eigvecs[k].T
            out += resp[:, k:k + 1] * grad_k
        return out if np.ndim(x) > 1 else out[0]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dimension))
        scale = np.sqrt(self.eigvals)  # (K, d)
        out = np.empty((n, self.dimension))
        for k in range(self.n_components):
            mask = idx == k
            if np.any(mask):
                out[mask] = self.means[k] + (z[mask] * scale[k]) @ self.eigvecs[k].T
        return out


def isotropic_mixture(weights, means, var: float = 1.0) -> GaussianMixture:
    means = np.atleast_2d(np.asarray(means, dtype=float))
    k, d = means.shape
    covs = np.broadcast_to(var * np.eye(d), (k, d, d)).copy()
    return GaussianMixture(np.asarray(weights, dtype=float), means, covs)


class World:
    """Registry of prompt -> mixture, plus prompt priors.

    Immutable after construction; the empty prompt is derived, not supplied.
    """

    def __init__(self, dimension: int, prompts: dict, priors: dict):
        self.dimension = int(dimension)
        self._registry: dict[PromptId, GaussianMixture] = {}
        self._priors: dict[PromptId, float] = {}
        total = float(sum(priors.values()))
        if total <= 0 or any(p < 0 for p in priors.values()):
            raise ConfigError("priors must be nonnegative with positive sum")
        for tokens, mixture in prompts.items():
            key = canonical_prompt(tokens)
            if key == EMPTY:
                raise ConfigError("the empty prompt is derived, not registered directly")
            if mixture.dimension != self.dimension:
                raise ConfigError(f"prompt {key}: dimension {mixture.dimension} != {self.dimension}")
            self._registry[key] = mixture
            self._priors[key] = priors[tokens] / total
        self._leaves = list(self._registry)
        # unconditional model: prior-weighted mixture over all leaf prompts
        w, m, c = [], [], []
        for key in self._leaves:
            mix = self._registry[key]
            w.append(self._priors[key] * mix.weights)
            m.append(mix.means)
            c.append(mix.covs)
        self._registry[EMPTY] = GaussianMixture(
            np.concatenate(w), np.concatenate(m), np.concatenate(c))
        self._priors[EMPTY] = 1.0

    @property
    def leaf_prompts(self) -> list[PromptId]:
        return list(self._leaves)

    @property
    def tokens(self) -> list[str]:
        seen = sorted({tok for key in self._leaves for tok in key})
        return seen

    def mixture(self, prompt) -> GaussianMixture:
        key = canonical_prompt(prompt)
        if key not in self._registry:
            raise UnknownPromptError(f"prompt {key} not registered")
        return self._registry[key]

    def prior(self, prompt) -> float:
        key = canonical_prompt(prompt)
        if key not in self._priors:
            raise UnknownPromptError(f"prompt {key} not registered")
        return self._priors[key]

    def marginal_params(self, prompt, t: float, sched: NoiseSchedule) -> GaussianMixture:
        """Exact perturbed mixture of `prompt` at time t (weights unchanged)."""
        alpha, sigma = sched.alpha_sigma(t)
        return self.mixture(prompt).perturbed(float(alpha), float(sigma))

    def score(self, prompt, x, t: float, sched: NoiseSchedule):
        alpha, sigma = sched.alpha_sigma(t)
        return self.mixture(prompt).score(x, float(alpha), float(sigma))

    def log_density(self, prompt, x, t: float, sched: NoiseSchedule):
        alpha, sigma = sched.alpha_sigma(t)
        return self.mixture(prompt).log_density(x, float(alpha), float(sigma))

    def score_field(self, prompt, sched: NoiseSchedule) -> ScoreField:
        mixture = self.mixture(prompt)

        def field_fn(x, t):
            alpha, sigma = sched.alpha_sigma(t)
            return mixture.score(x, float(alpha), float(sigma))

        return field_fn

    def sample(self, prompt, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mixture(prompt).sample(n, rng)

    def to_config(self) -> dict:
        prompts = []
        for key in self._leaves:
            mix = self._registry[key]
            prompts.append({
                "tokens": list(key),
                "prior": self._priors[key],
                "weights": mix.weights.tolist(),
                "means": mix.means.tolist(),
                "covariances": mix.covs.tolist(),
            })
        return {"dimension": self.dimension, "prompts": prompts}


def _parse_covariances(raw, k: int, d: int) -> np.ndarray:
    """Accept scalar (isotropic), length-d vector (diagonal), or full matrix."""
    covs = np.empty((k, d, d))
    for i in range(k):
        entry = np.asarray(raw[i], dtype=float)
        if entry.ndim == 0:
            covs[i] = float(entry) * np.eye(d)
        elif entry.ndim == 1:
            if entry.size != d:
                raise ConfigError(f"diagonal covariance needs {d} entries")
            covs[i] = np.diag(entry)
        elif entry.shape == (d, d):
            covs[i] = entry
        else:
            raise ConfigError(f"covariance entry has shape {entry.shape}")
    return covs


def world_from_config(config: dict) -> World:
    try:
        d = int(config["dimension"])
        entries = config["prompts"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"world config missing field: {exc}") from exc
    prompts, priors = {}, {}
    for entry in entries:
        tokens = tuple(entry["tokens"])
        means = np.atleast_2d(np.asarray(entry["means"], dtype=float))
        k = means.shape[0]
        weights = np.asarray(entry.get("weights", np.full(k, 1.0 / k)), dtype=float)
        covs = _parse_covariances(entry.get("covariances", [1.0] * k), k, d)
        prompts[tokens] = GaussianMixture(weights, means, covs)
        priors[tokens] = float(entry.get("prior", 1.0))
    return World(d, prompts, priors)


def load_world(path) -> World:
    with open(Path(path)) as fh:
        return world_from_config(json.load(fh))


def rejection_sample_tilted(world: World, sched: NoiseSchedule, y_pos, y_neg,
                            gamma: float, n: int, seed: int,
                            max_rate_floor: float = 1e-4) -> np.ndarray:
    """Exact i.i.d. samples from the tilted target p(x) c(x) / Z at t = 0.

    The binary classifier value c(x) in (0, 1) is used directly as the
    acceptance probability over proposals from the unconditional mixture,
    so accepted draws follow p(x) c(x) / Z exactly.
    """
    rng = np.random.default_rng(seed)
    log_prior_pos = np.log(world.prior(y_pos))
    log_prior_neg = np.log(world.prior(y_neg))
    base = world.mixture(EMPTY)
    pos = world.mixture(y_pos)
    neg = world.mixture(y_neg)

    out = np.empty((n, world.dimension))
    accepted = 0
    proposed = 0
    while accepted < n:
        batch = max(2 * (n - accepted), 1000)
        x = base.sample(batch, rng)
        lc_pos = log_prior_pos + gamma * pos.log_density(x)
        lc_neg = log_prior_neg + gamma * neg.log_density(x)
        log_accept = lc_pos - np.logaddexp(lc_pos, lc_neg)
        keep = np.log(rng.uniform(size=batch)) < log_accept
        take = min(int(keep.sum()), n - accepted)
        out[accepted:accepted + take] = x[keep][:take]
        accepted += take
        proposed += batch
        if proposed >= 10_000 and accepted / proposed < max_rate_floor:
            raise NumericsError(
                f"rejection acceptance rate {accepted / proposed:.2e} below {max_rate_floor}")
    return out


# ---------------------------------------------------------------------------
# Standard worlds used throughout the experiments and tests.

def standard_normal_world(d: int = 1) -> World:
    """Single prompt at N(0, I); the VP-stationary world."""
    return World(d, {("base",): isotropic_mixture([1.0], [np.zeros(d)])}, {("base",): 1.0})


def gaussian_world(mean, var: float = 1.0) -> World:
    """Single prompt at N(mean, var I); linear score in x."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    return World(mean.size, {("target",): isotropic_mixture([1.0], [mean], var)},
                 {("target",): 1.0})


def two_prompt_world(sep: float = 2.0) -> World:
    """d=1 symmetric pair: 'right' at N(+sep, 1), 'left' at N(-sep, 1)."""
    return World(1, {
        ("right",): isotropic_mixture([1.0], [[sep]]),
        ("left",): isotropic_mixture([1.0], [[-sep]]),
    }, {("right",): 0.5, ("left",): 0.5})


def two_factor_world() -> World:
    """d=2 factorized world: coordinate 1 carries the concept, coordinate 2
    a shared style factor.

    The prompt pair ('subject','accessory') / ('subject',) differs only in
    the concept coordinate and shares the style marginal N(1, 1), so their
    score difference is exactly zero on coordinate 2. The unconditional
    mixture is dominated by an unrelated 'scene' prompt whose style factor
    overlaps the subject region, which makes guidance toward (or away from)
    the empty prompt disturb the style coordinate.
    """
    return World(2, {
        ("subject", "accessory"): isotropic_mixture([1.0], [[2.0, 1.0]]),
        ("subject",): isotropic_mixture([1.0], [[-2.0, 1.0]]),
        ("scene",): isotropic_mixture([1.0], [[0.0, -1.0]]),
    }, {
        ("subject", "accessory"): 0.2,
        ("subject",): 0.2,
        ("scene",): 0.6,
    })


def rig_world(delta: float = 0.5) -> World:
    """d=2 linear world for strength sweeps: single-Gaussian prompts whose
    contrastive difference is alpha_t (2 delta, 0), constant in x."""
    return World(2, {
        ("scene",): isotropic_mixture([1.0], [[0.0, 0.0]]),
        ("scene", "bright"): isotropic_mixture([1.0], [[delta, 0.0]]),
        ("scene", "dark"): isotropic_mixture([1.0], [[-delta, 0.0]]),
    }, {
        ("scene",): 0.5,
        ("scene", "bright"): 0.25,
        ("scene", "dark"): 0.25,
    })


def random_mixture_world(rng: np.random.Generator, d: int | None = None,
                         n_prompts: int = 2, max_components: int = 3) -> World:
    """Random well-conditioned world for property tests."""
    if d is None:
        d = int(rng.integers(1, 4))
    prompts, priors = {}, {}
    prior_weights = rng.dirichlet(np.full(n_prompts, 2.0))
    for i in range(n_prompts):
        k = int(rng.integers(1, max_components + 1))
        means = rng.uniform(-3.0, 3.0, size=(k, d))
        covs = np.empty((k, d, d))
        for j in range(k):
            a = rng.standard_normal((d, d))
            covs[j] = a @ a.T / d + 0.5 * np.eye(d)
        weights = rng.dirichlet(np.full(k, 2.0))
        prompts[(f"p{i}",)] = GaussianMixture(weights, means, covs)
        priors[(f"p{i}",)] = float(prior_weights[i])
    return World(d, prompts, priors)


BUILTIN_WORLDS = {
    "standard-normal": standard_normal_world,
    "two-prompt": two_prompt_world,
    "two-factor": two_factor_world,
    "rig": rig_world,
}


def resolve_world(name_or_path: str) -> World:
    """A builtin world name, or a path to a world JSON file."""
    if name_or_path in BUILTIN_WORLDS:
        return BUILTIN_WORLDS[name_or_path]()
    p = Path(name_or_path)
    if p.exists():
        return load_world(p)
    raise ConfigError(
        f"unknown world {name_or_path!r}; builtin names: {sorted(BUILTIN_WORLDS)}")
