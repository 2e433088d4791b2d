"""meldiff: guided-diffusion engine for mel-spectrograms.

DDPM ancestral sampling with combined classifier-free and
gradient-normalized classifier guidance, closed-form Gaussian oracles
for exact verification, small trainable networks with hand-written
backpropagation, the matching mel-spectrogram front-end with a
Griffin-Lim inverse, and bit-exact persistence formats.
"""

from .conditioning import (ConditioningBundle, merge_embeddings,
                           null_condition, temporal_upsample)
from .guidance import (GuidanceConfig, GuidanceTerm, cfg_combine,
                       gradient_norm_factor, guided_eps)
from .models import (GaussianClassifier, GaussianDenoiser, GaussianWorld,
                     ToyClassifier, ToyDenoiser, time_embedding)
from .sampler import SampleTrace, ddpm_step, sample, sample_batch
from .schedule import NoiseSchedule, alpha_bar, build_linear_schedule, q_sample
from .trainer import Adam, TrainConfig, make_synthetic_dataset, train_loop

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "ConditioningBundle",
    "GaussianClassifier",
    "GaussianDenoiser",
    "GaussianWorld",
    "GuidanceConfig",
    "GuidanceTerm",
    "NoiseSchedule",
    "SampleTrace",
    "ToyClassifier",
    "ToyDenoiser",
    "TrainConfig",
    "alpha_bar",
    "build_linear_schedule",
    "cfg_combine",
    "ddpm_step",
    "gradient_norm_factor",
    "guided_eps",
    "make_synthetic_dataset",
    "merge_embeddings",
    "null_condition",
    "q_sample",
    "sample",
    "sample_batch",
    "temporal_upsample",
    "time_embedding",
    "train_loop",
]
