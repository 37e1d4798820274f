"""Active sensing design from posterior ensembles."""

from .ads import RULES, LineAcquisition, ads_checkpoints, ads_run, random_run, restart_run, select_line
from .free import adasense_free_run, gaussian_posterior_covariance, optimal_design_mse
from .selection import (
    CandidateSet,
    SensingDesign,
    adasense_constrained,
    adasense_constrained_scores,
    adasense_free,
    argmax_lowest,
    entropy_scores,
    entropy_select,
    gas_scores,
    gas_select,
    kspace_line_candidates,
    measurement_samples,
    pairwise_gmm_entropy,
    pixel_candidates,
)

__all__ = [
    "RULES",
    "LineAcquisition",
    "ads_checkpoints",
    "ads_run",
    "random_run",
    "restart_run",
    "select_line",
    "adasense_free_run",
    "gaussian_posterior_covariance",
    "optimal_design_mse",
    "CandidateSet",
    "SensingDesign",
    "adasense_constrained",
    "adasense_constrained_scores",
    "adasense_free",
    "argmax_lowest",
    "entropy_scores",
    "entropy_select",
    "gas_scores",
    "gas_select",
    "kspace_line_candidates",
    "measurement_samples",
    "pairwise_gmm_entropy",
    "pixel_candidates",
]
