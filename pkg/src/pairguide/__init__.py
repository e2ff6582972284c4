"""Prompt-pair guidance for diffusion samplers on analytic mixture worlds."""

from .schedule import NoiseSchedule, TimeGrid, T_FLOOR, alpha_sigma, perturb
from .samplers import (NoiseRecord, Trajectory, ddim_step, pf_ode_step,
                       reverse_sde_step, sample)
from .worlds import (EMPTY, GaussianMixture, World, canonical_prompt,
                     load_world, rejection_sample_tilted, resolve_world)
from .guidance import (GuidanceSpec, PiecewiseSchedule, cfg_score, classifier_prob,
                       compose, contrastive_score, lambda_exact, negative_score)
from .density import DensityEstimate, divergence, lambda_via_ode, log_density_ode
from .analysis import (contrastive_likelihood_score, energy_distance,
                       energy_permutation_test, gaussian_w2, paired_displacement,
                       rig_sweep)
from .editing import (EditTask, cycle_decode, cycle_encode, hyperparameter_search,
                      make_edit_guidance, run_cycle_edit, sdedit)

__version__ = "0.1.0"
