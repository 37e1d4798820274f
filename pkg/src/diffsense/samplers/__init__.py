"""Conditional reverse diffusion: DPS guidance, joint separation and sequential inference."""

from .dps import (
    CLAMP,
    GuidanceConfig,
    PosteriorEnsemble,
    SamplerConfig,
    SeparationProblem,
    StepSnapshot,
    companded_dc_grad,
    companded_misfit_grads,
    data_misfit_grads,
    dps_grad,
    dps_sample,
    guided_scores,
    joint_separate,
    run_reverse,
)
from .sequential import SequentialConfig, predict_next, sequential_pipeline

__all__ = [
    "CLAMP",
    "GuidanceConfig",
    "PosteriorEnsemble",
    "SamplerConfig",
    "SeparationProblem",
    "StepSnapshot",
    "companded_dc_grad",
    "companded_misfit_grads",
    "data_misfit_grads",
    "dps_grad",
    "dps_sample",
    "guided_scores",
    "joint_separate",
    "run_reverse",
    "SequentialConfig",
    "predict_next",
    "sequential_pipeline",
]
