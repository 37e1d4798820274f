"""Sequential free-row design (principal directions of the posterior ensemble)."""

from __future__ import annotations

import numpy as np

from ..operators import DenseOperator, MeasurementModel
from ..priors.gaussian import GaussianPrior
from ..samplers.dps import SamplerConfig, SeparationProblem, dps_sample
from ..sde import NoiseSchedule
from .selection import SensingDesign, adasense_free

__all__ = ["gaussian_posterior_covariance", "optimal_design_mse", "adasense_free_run"]


def gaussian_posterior_covariance(prior_cov, rows, noise_std: float) -> np.ndarray:
    """Posterior covariance of ``N(mu, prior_cov)`` after observing ``rows @ x + eps``."""
    prior_cov = np.asarray(prior_cov, dtype=float)
    rows = np.atleast_2d(np.asarray(rows, dtype=float)).reshape(-1, prior_cov.shape[0])
    if rows.shape[0] == 0:
        return prior_cov.copy()
    S = rows @ prior_cov @ rows.T + noise_std**2 * np.eye(rows.shape[0])
    K = prior_cov @ rows.T
    return prior_cov - K @ np.linalg.solve(S, K.T)


def optimal_design_mse(prior_cov, noise_std: float, budget: int) -> list[float]:
    """MMSE after 0..budget rows chosen greedily as top eigenvectors of the current posterior covariance."""
    rows = np.zeros((0, np.shape(prior_cov)[0]))
    post = np.asarray(prior_cov, dtype=float)
    out = [float(np.trace(post))]
    for _ in range(budget):
        w, V = np.linalg.eigh(post)
        rows = np.vstack([rows, V[:, -1]])
        post = gaussian_posterior_covariance(prior_cov, rows, noise_std)
        out.append(float(np.trace(post)))
    return out


def adasense_free_run(x_true, prior: GaussianPrior, noise_std: float, budget: int, config: SamplerConfig,
                      schedule: NoiseSchedule, rng, r: int = 1):
    """Acquire ``budget`` rows, ``r`` at a time, from DPS ensembles of the current posterior.

    Returns ``(design, mse)`` where ``mse[t]`` is the exact posterior MSE
    ``tr(Sigma_post)`` after ``t`` rows.
    """
    x_true = np.asarray(x_true, dtype=float)
    d = x_true.size
    cov = prior.cov.matrix()
    design = SensingDesign("free-rows", budget)
    ys: list[float] = []
    mse = [float(np.trace(cov))]
    while len(design.selected) < budget:
        rows = np.array(design.selected).reshape(-1, d)
        model = MeasurementModel(DenseOperator(rows), noise_std)
        ens = dps_sample(SeparationProblem(np.array(ys), model, prior), config, schedule)
        for row in adasense_free(ens, min(r, budget - len(design.selected)), rows if len(rows) else None):
            design.add(row, step=len(design.selected))
            ys.append(float(row @ x_true + noise_std * rng.standard_normal()))
            post = gaussian_posterior_covariance(cov, np.array(design.selected), noise_std)
            mse.append(float(np.trace(post)))
    return design, mse
