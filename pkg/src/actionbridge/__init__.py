"""Diffusion-bridge translation of prior action distributions into expert
action distributions, with 2D synthetic benchmarks and a waypoint-navigation
simulator."""

__version__ = "0.1.0"

from .bridge import (
    BridgeMarginal,
    ScalingSet,
    bridge_marginal,
    h_transform,
    precondition,
    sample_bridge,
    scaling,
    score_from_denoiser,
)
from .denoiser import Denoiser, DenoiserArch, param_count, time_embedding
from .schedule import NoiseSchedule
from .sampling import (
    DdpmSchedule,
    ddpm_baseline_sample,
    make_denoise_fn,
    ode_step,
    sample,
    sample_with_fn,
    sde_step,
    time_grid,
)
from .training import (
    AdamState,
    LossWeights,
    TrainingTuple,
    TupleDataset,
    adam_init,
    adam_step,
    bridge_loss,
    fit_bridge,
    sample_training_tuple,
)
from .priors import (
    Cvae,
    CvaeArch,
    DecisionCategory,
    RuleHead,
    RuleHeadOutput,
    TemporalHead,
    admissible_h_interval,
    class_of_heading,
    gaussian_prior,
    noise_std,
    parabola_fit,
    sample_parabolic_prior,
)
from .toybench import (
    GaussianPair,
    PointCloud2D,
    ToyRunConfig,
    TranslationMetrics,
    emd,
    error_bound_experiment,
    kl_gaussian,
    make_2d_dataset,
    run_translation_experiment,
)
