"""Score-function providers."""

from .base import CountingPrior, PointMassPrior, ScorePrior, tweedie_denoise
from .gaussian import Covariance, GaussianPrior, GmmPrior, score_gaussian, score_gmm
from .scorenet import (
    ScoreNet,
    TrainingConfig,
    dsm_loss_and_grads,
    dsm_train,
    load_scorenet,
    save_scorenet,
    score_net_eval,
)
from .sparse import SparsityPrior, score_sparse, soft_threshold, soft_threshold_vjp, sparse_posterior_mean

__all__ = [
    "ScorePrior",
    "PointMassPrior",
    "CountingPrior",
    "tweedie_denoise",
    "Covariance",
    "GaussianPrior",
    "GmmPrior",
    "score_gaussian",
    "score_gmm",
    "SparsityPrior",
    "soft_threshold",
    "soft_threshold_vjp",
    "sparse_posterior_mean",
    "score_sparse",
    "ScoreNet",
    "TrainingConfig",
    "score_net_eval",
    "dsm_loss_and_grads",
    "dsm_train",
    "save_scorenet",
    "load_scorenet",
]
