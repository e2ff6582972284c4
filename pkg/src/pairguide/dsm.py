"""Small learned score networks trained by denoising score matching.

The network predicts the noise eps from (x_t, t, prompt); its score is
recovered as s(x, t) = -eps_hat / sigma_t. Training minimizes the
noise-matching form E ||eps_hat - z||^2, the sigma^2-weighted version of
the score-matching residual E ||s_theta + z / sigma_t||^2, which shares its
minimizer and stays bounded at small t.

Prompts are conditioned through summed learned token embeddings; the empty
prompt sums to the zero vector. Time enters through a sinusoidal embedding.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, NumericsError
from .samplers import ScoreField
from .schedule import NoiseSchedule
from .worlds import EMPTY, World, canonical_prompt


def _sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(torch.linspace(0.0, math.log(200.0), half))
    angles = t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


class NoiseNet(nn.Module):
    """3 hidden layers, width 64: (x, t-embedding, prompt-embedding) -> eps."""

    def __init__(self, d: int, n_tokens: int, t_dim: int = 16, token_dim: int = 16,
                 hidden: int = 64):
        super().__init__()
        self.d = d
        self.t_dim = t_dim
        self.token_emb = nn.Parameter(0.1 * torch.randn(n_tokens, token_dim))
        self.body = nn.Sequential(
            nn.Linear(d + t_dim + token_dim, hidden), nn.SiLU(),
            nn.Linear(hidden, hidden), nn.SiLU(),
            nn.Linear(hidden, hidden), nn.SiLU(),
            nn.Linear(hidden, d),
        )

    def forward(self, x: torch.Tensor, t: torch.Tensor, prompt_hot: torch.Tensor):
        emb_t = _sinusoidal_embedding(t, self.t_dim)
        emb_p = prompt_hot @ self.token_emb
        return self.body(torch.cat([x, emb_t, emb_p], dim=-1))


@dataclass
class LearnedScoreModel:
    net: NoiseNet
    token_index: dict
    sched: NoiseSchedule
    d: int
    steps_trained: int = 0
    loss_curve: np.ndarray = field(default_factory=lambda: np.empty(0))

    def prompt_vector(self, prompt) -> np.ndarray:
        hot = np.zeros(len(self.token_index))
        for tok in canonical_prompt(prompt):
            if tok not in self.token_index:
                raise ConfigError(f"token {tok!r} not in the model vocabulary")
            hot[self.token_index[tok]] = 1.0
        return hot

    def eps(self, x: np.ndarray, t: float, prompt) -> np.ndarray:
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        hot = torch.as_tensor(np.tile(self.prompt_vector(prompt), (x2.shape[0], 1)),
                              dtype=torch.float32)
        with torch.no_grad():
            out = self.net(torch.as_tensor(x2, dtype=torch.float32),
                           torch.full((x2.shape[0],), float(t)), hot)
        out = out.numpy().astype(float)
        return out if np.ndim(x) > 1 else out[0]

    def score_field(self, prompt, sched: NoiseSchedule | None = None) -> ScoreField:
        sched = sched or self.sched
        key = canonical_prompt(prompt)

        def field_fn(x, t):
            _, sigma = sched.alpha_sigma(t)
            return -self.eps(x, t, key) / float(sigma)

        return field_fn

    def family(self, sched: NoiseSchedule | None = None):
        """Prompt family over this model's conditionals (for guidance terms)."""
        sched = sched or self.sched
        fields: dict = {}

        def fam(prompt, x, t):
            key = canonical_prompt(prompt)
            if key not in fields:
                fields[key] = self.score_field(key, sched)
            return fields[key](x, t)

        return fam

    def clone(self) -> "LearnedScoreModel":
        return LearnedScoreModel(copy.deepcopy(self.net), dict(self.token_index),
                                 self.sched, self.d, self.steps_trained,
                                 self.loss_curve.copy())


def _train(model: LearnedScoreModel, draw_batch, budget: int, seed: int,
           lr: float = 1e-3) -> LearnedScoreModel:
    torch.manual_seed(seed)
    opt = torch.optim.Adam(model.net.parameters(), lr=lr)
    losses = []
    for step in range(budget):
        x_t, t, z, hot = draw_batch(step)
        pred = model.net(x_t, t, hot)
        loss = torch.mean((pred - z) ** 2)
        if not torch.isfinite(loss):
            raise NumericsError("training loss diverged", step=step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss))
    model.steps_trained += budget
    model.loss_curve = np.concatenate([model.loss_curve, np.asarray(losses)])
    return model


def _make_batch_fn(world: World, prompts, model: LearnedScoreModel,
                   sched: NoiseSchedule, seed: int, batch_size: int,
                   t_lo: float):
    rng = np.random.default_rng(seed)
    prompt_keys = [canonical_prompt(p) for p in prompts]
    hots = np.stack([model.prompt_vector(p) for p in prompt_keys])

    def draw(step: int):
        idx = rng.integers(0, len(prompt_keys), size=batch_size)
        x0 = np.empty((batch_size, world.dimension))
        for j, key in enumerate(prompt_keys):
            mask = idx == j
            if np.any(mask):
                x0[mask] = world.sample(key, int(mask.sum()), rng)
        t = rng.uniform(t_lo, sched.T, size=batch_size)
        z = rng.standard_normal((batch_size, world.dimension))
        alpha, sigma = sched.alpha_sigma(t)
        x_t = alpha[:, None] * x0 + sigma[:, None] * z
        return (torch.as_tensor(x_t, dtype=torch.float32),
                torch.as_tensor(t, dtype=torch.float32),
                torch.as_tensor(z, dtype=torch.float32),
                torch.as_tensor(hots[idx], dtype=torch.float32))

    return draw


def train_dsm(world: World, prompts, sched: NoiseSchedule, budget: int, seed: int,
              batch_size: int = 256, lr: float = 1e-3, t_lo: float = 0.02,
              include_empty: bool = True) -> LearnedScoreModel:
    """Train a prompt-conditioned score model on the world's conditionals."""
    if budget < 0:
        raise ConfigError("budget must be nonnegative")
    prompts = [canonical_prompt(p) for p in prompts]
    for p in prompts:
        world.mixture(p)  # raises for unregistered prompts
    if include_empty and EMPTY not in prompts:
        prompts = prompts + [EMPTY]
    tokens = world.tokens
    token_index = {tok: i for i, tok in enumerate(tokens)}
    torch.manual_seed(seed)
    net = NoiseNet(world.dimension, len(tokens))
    model = LearnedScoreModel(net, token_index, sched, world.dimension)
    if budget == 0:
        return model
    draw = _make_batch_fn(world, prompts, model, sched, seed + 1, batch_size, t_lo)
    return _train(model, draw, budget, seed + 2, lr=lr)


def finetune_expert(base: LearnedScoreModel, world: World, domain_prompt,
                    budget: int, seed: int, batch_size: int = 256,
                    lr: float = 1e-3, t_lo: float = 0.02) -> LearnedScoreModel:
    """Continue training a copy on the domain prompt's data, unconditionally."""
    model = base.clone()
    if budget == 0:
        return model
    # domain samples, empty-prompt conditioning
    rng = np.random.default_rng(seed + 3)
    domain_key = canonical_prompt(domain_prompt)
    sched = model.sched

    def draw_domain(step: int):
        x0 = world.sample(domain_key, batch_size, rng)
        t = rng.uniform(t_lo, sched.T, size=batch_size)
        z = rng.standard_normal((batch_size, world.dimension))
        alpha, sigma = sched.alpha_sigma(t)
        x_t = alpha[:, None] * x0 + sigma[:, None] * z
        hot = torch.zeros((batch_size, len(model.token_index)))
        return (torch.as_tensor(x_t, dtype=torch.float32),
                torch.as_tensor(t, dtype=torch.float32),
                torch.as_tensor(z, dtype=torch.float32), hot)

    return _train(model, draw_domain, budget, seed + 2, lr=lr)


def rms_score_error(model_field: ScoreField, world: World, prompt,
                    sched: NoiseSchedule, n: int = 2000, seed: int = 0,
                    t_range=(0.1, 0.9)) -> float:
    """Per-coordinate RMS gap to the analytic score over x ~ p_t(.|prompt)."""
    rng = np.random.default_rng(seed)
    key = canonical_prompt(prompt)
    t_values = rng.uniform(t_range[0], t_range[1], size=n)
    err_sq = 0.0
    for t in np.unique(np.round(t_values, 2)):
        m = int(np.sum(np.round(t_values, 2) == t))
        x0 = world.sample(key, m, rng)
        z = rng.standard_normal((m, world.dimension))
        alpha, sigma = sched.alpha_sigma(float(t))
        x_t = alpha * x0 + sigma * z
        diff = np.asarray(model_field(x_t, float(t))) - world.score(key, x_t, float(t), sched)
        err_sq += float(np.sum(diff * diff))
    return float(np.sqrt(err_sq / (n * world.dimension)))
