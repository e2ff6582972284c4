"""Paired-trajectory protocols and desk-scale distribution metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

from .errors import ConfigError
from .guidance import GuidanceSpec, compose
from .samplers import NoiseRecord, ScoreField, sample
from .schedule import NoiseSchedule, TimeGrid
from .worlds import World


@dataclass
class PairedRun:
    """Endpoints of two samplers that consumed the identical noise record."""

    base_final: np.ndarray
    guided_final: np.ndarray
    noise_record: NoiseRecord | None

    @property
    def displacement(self) -> np.ndarray:
        return self.guided_final - self.base_final


@dataclass
class DisplacementStats:
    mean_l2: float
    p50_l2: float
    p90_l2: float
    per_coord_mean_abs: np.ndarray
    per_coord_mean: np.ndarray
    n: int
    run: PairedRun


@dataclass
class MetricReport:
    metric: str
    value: float
    n: int
    seed: int
    ci_half_width: float | None = None

    def to_dict(self) -> dict:
        return {"metric": self.metric, "value": self.value, "n": self.n,
                "seed": self.seed, "ci_half_width": self.ci_half_width}


def bootstrap_half_width(values, seed: int = 0, n_boot: int = 1000) -> float | None:
    """Half-width of the 95% bootstrap interval for the mean; None below n=30."""
    values = np.asarray(values, dtype=float)
    if values.size < 30:
        return None
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, values.size, size=(n_boot, values.size))
    means = values[idx].mean(axis=1)
    lo, hi = np.percentile(means, [2.5, 97.5])
    return float(0.5 * (hi - lo))


def paired_displacement(base: ScoreField, guided: ScoreField, n: int, d: int,
                        grid: TimeGrid, sched: NoiseSchedule, seed: int,
                        sampler: str = "em_sde", eta: float = 0.1) -> DisplacementStats:
    """Run base and guided fields on the same initial state and noise draws.

    All random variables are fixed between the two runs, so the endpoint
    differences isolate what the guidance term did.
    """
    rng = np.random.default_rng(seed)
    x_init = rng.standard_normal((n, d))
    base_traj = sample(base, grid, sched, sampler, eta=eta, rng=rng,
                       x_init=x_init, record_noise=True)
    guided_traj = sample(guided, grid, sched, sampler, eta=eta,
                         x_init=x_init, noise_record=base_traj.noise_record)
    run = PairedRun(base_traj.x_final, guided_traj.x_final, base_traj.noise_record)
    delta = run.displacement
    l2 = np.linalg.norm(delta, axis=1)
    return DisplacementStats(
        mean_l2=float(l2.mean()),
        p50_l2=float(np.percentile(l2, 50)),
        p90_l2=float(np.percentile(l2, 90)),
        per_coord_mean_abs=np.abs(delta).mean(axis=0),
        per_coord_mean=delta.mean(axis=0),
        n=n, run=run)


@dataclass
class RigSweepResult:
    lambdas: np.ndarray
    means: np.ndarray       # (len(lambdas), d)
    std_errors: np.ndarray  # (len(lambdas), d)
    covs: np.ndarray        # (len(lambdas), d, d)
    n: int
    seed: int


def with_constant_lambda(template: GuidanceSpec, lam: float) -> GuidanceSpec:
    """Copy of the spec with every constant contrastive coefficient set to lam."""
    from .guidance import ContrastiveTerm, PiecewiseSchedule

    terms = []
    replaced = False
    for term in template.terms:
        if isinstance(term, ContrastiveTerm) and term.lam is not None:
            terms.append(ContrastiveTerm(term.positive, term.negative,
                                         lam=PiecewiseSchedule.constant(lam)))
            replaced = True
        else:
            terms.append(term)
    if not replaced:
        raise ConfigError("spec template has no constant-coefficient contrastive term")
    return GuidanceSpec(base_kind=template.base_kind, base_prompt=template.base_prompt,
                        base_tau=template.base_tau, base_name=template.base_name,
                        terms=tuple(terms))


def rig_sweep(template: GuidanceSpec, world: World, sched: NoiseSchedule,
              lambdas, n: int, grid: TimeGrid, seed: int,
              sampler: str = "em_sde", eta: float = 0.1,
              extra_fields=None) -> RigSweepResult:
    """Endpoint statistics per guidance strength, with shared noise across
    strengths (identical seed stream) for variance reduction."""
    lambdas = np.asarray(list(lambdas), dtype=float)
    d = world.dimension
    means, ses, covs = [], [], []
    for lam in lambdas:
        field = compose(with_constant_lambda(template, float(lam)), world, sched,
                        extra_fields=extra_fields)
        traj = sample(field, grid, sched, sampler, eta=eta, seed=seed, n=n, d=d)
        x = traj.x_final
        means.append(x.mean(axis=0))
        ses.append(x.std(axis=0, ddof=1) / np.sqrt(n))
        covs.append(np.cov(x.T).reshape(d, d))
    return RigSweepResult(lambdas, np.array(means), np.array(ses), np.array(covs),
                          n=n, seed=seed)


# ---------------------------------------------------------------------------
# Distribution distances.

def _mean_pairwise(a: np.ndarray, b: np.ndarray, chunk: int = 1024) -> float:
    total = 0.0
    for start in range(0, a.shape[0], chunk):
        total += cdist(a[start:start + chunk], b).sum()
    return total / (a.shape[0] * b.shape[0])


def energy_distance(samples_a, samples_b) -> float:
    """Energy-distance V-statistic 2 E|A-B| - E|A-A'| - E|B-B'|.

    Zero exactly when both arguments are the same sample set; zero in the
    large-sample limit iff the distributions coincide.
    """
    a = np.atleast_2d(np.asarray(samples_a, dtype=float))
    b = np.atleast_2d(np.asarray(samples_b, dtype=float))
    if a.ndim == 2 and a.shape[1] != b.shape[1]:
        raise ConfigError(f"dimension mismatch {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ConfigError("empty sample set")
    return 2.0 * _mean_pairwise(a, b) - _mean_pairwise(a, a) - _mean_pairwise(b, b)


def energy_permutation_test(samples_a, samples_b, n_perm: int = 200,
                            quantile: float = 0.99, seed: int = 0,
                            chunk: int = 512):
    """Observed energy distance plus its permutation-null quantile.

    Every permutation statistic is computed exactly from pooled pairwise
    distances, accumulated chunk-wise against the permutation label matrix
    so the full distance matrix never materializes.
    """
    a = np.atleast_2d(np.asarray(samples_a, dtype=np.float32))
    b = np.atleast_2d(np.asarray(samples_b, dtype=np.float32))
    na, nb = a.shape[0], b.shape[0]
    pool = np.vstack([a, b])
    m = na + nb
    rng = np.random.default_rng(seed)
    labels = np.zeros((m, n_perm), dtype=np.float32)
    for j in range(n_perm):
        labels[rng.permutation(m)[:na], j] = 1.0

    s_aa = np.zeros(n_perm)
    t1 = np.zeros(n_perm)
    s_tot = 0.0
    obs_aa = 0.0
    obs_bb = 0.0
    obs_ab = 0.0
    for start in range(0, m, chunk):
        rows = slice(start, min(start + chunk, m))
        dc = cdist(pool[rows], pool).astype(np.float32)
        m1 = dc @ labels
        s_aa += (labels[rows] * m1).sum(axis=0)
        t1 += m1.sum(axis=0)
        s_tot += float(dc.sum())
        # observed split: first na rows are A
        row_idx = np.arange(start, min(start + chunk, m))
        a_rows = row_idx < na
        obs_aa += float(dc[a_rows][:, :na].sum())
        obs_bb += float(dc[~a_rows][:, na:].sum())
        obs_ab += float(dc[a_rows][:, na:].sum())

    observed = 2.0 * obs_ab / (na * nb) - obs_aa / (na * na) - obs_bb / (nb * nb)
    s_ab = t1 - s_aa
    s_bb = s_tot - s_aa - 2.0 * s_ab
    null_stats = 2.0 * s_ab / (na * nb) - s_aa / (na * na) - s_bb / (nb * nb)
    threshold = float(np.quantile(null_stats, quantile))
    return float(observed), threshold, null_stats


def gaussian_w2(mu1, cov1, mu2, cov2) -> float:
    """Closed-form 2-Wasserstein distance between two Gaussians."""
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=float))
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=float))
    cov2 = np.atleast_2d(np.asarray(cov2, dtype=float))
    for cov in (cov1, cov2):
        if np.any(np.linalg.eigvalsh(cov) <= 0):
            raise ConfigError("covariances must be positive-definite")
    root2 = scipy.linalg.sqrtm(cov2).real
    cross = scipy.linalg.sqrtm(root2 @ cov1 @ root2).real
    gap = float(np.sum((mu1 - mu2) ** 2) + np.trace(cov1 + cov2 - 2.0 * cross))
    return float(np.sqrt(max(gap, 0.0)))


def contrastive_likelihood_score(x, y_pos, y_neg, world: World):
    """log p_0(x|y+) - log p_0(x|y-): the analytic prompt-alignment score."""
    return (world.mixture(y_pos).log_density(x)
            - world.mixture(y_neg).log_density(x))
