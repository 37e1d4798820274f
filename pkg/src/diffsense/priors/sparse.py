"""Model-based sparse prior whose denoiser is soft thresholding.

The denoised estimate at noise level ``tau`` is the l1 proximal point

    x0 = argmin_x  |x_tau - x|^2 / (2 sigma^2) + lam_tau |x|_1  = S(x_tau, lam_tau sigma^2),

and the score follows from Tweedie's identity read backwards,
``score = (alpha x0 - x_tau) / sigma^2``. Complex coordinates shrink in
magnitude and keep their phase.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..errors import DomainError
from .base import ScorePrior

__all__ = ["SparsityPrior", "soft_threshold", "soft_threshold_vjp", "sparse_posterior_mean", "score_sparse"]


def soft_threshold(x, lam) -> np.ndarray:
    """``(x/|x|)(|x| - lam)_+`` per coordinate, with the phase factor taken as 0 at x = 0."""
    if np.any(np.asarray(lam) < 0):
        raise DomainError("threshold must be non-negative")
    x = np.asarray(x)
    mag = np.abs(x)
    shrunk = np.maximum(mag - lam, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mag > 0, shrunk / np.where(mag > 0, mag, 1.0), 0.0)
    return x * scale


def soft_threshold_vjp(x, lam, v) -> np.ndarray:
    """Transpose Jacobian of :func:`soft_threshold` at ``x`` applied to ``v``.

    For complex ``x`` the Jacobian is that of the realified map, which is
    symmetric: ``v - (lam/|x|)(v - u Re(conj(u) v))`` outside the dead zone, with
    ``u = x/|x|``.
    """
    x = np.asarray(x)
    v = np.asarray(v)
    mag = np.abs(x)
    active = mag > lam
    if not np.iscomplexobj(x) and not np.iscomplexobj(v):
        return np.where(active, v, 0.0)
    safe = np.where(active, mag, 1.0)
    u = x / safe
    radial = u * np.real(np.conj(u) * v)
    out = v - (lam / safe) * (v - radial)
    return np.where(active, out, 0.0)


@dataclass(frozen=True)
class SparsityPrior(ScorePrior):
    """Sparse prior with threshold schedule ``lam_tau``.

    By default ``lam_tau = lambda0 / sigma_tau``, so the effective threshold
    ``lam_tau sigma_tau^2 = lambda0 sigma_tau`` shrinks as the noise anneals.
    A custom ``lambda_fn(tau, alpha, sigma)`` may be supplied instead.
    """

    lambda0: float = 0.1
    lambda_fn: Optional[Callable[[float, float, float], float]] = None
    dim: Optional[int] = None

    def __post_init__(self):
        if not self.lambda0 > 0:
            raise DomainError("lambda0 must be positive")

    def lam(self, tau, schedule) -> float:
        alpha, sigma = schedule.rates(tau)
        if self.lambda_fn is not None:
            value = float(self.lambda_fn(tau, alpha, sigma))
        elif sigma == 0:
            value = np.inf
        else:
            value = self.lambda0 / sigma
        if not value > 0:
            raise DomainError(f"lambda_tau must be positive, got {value}")
        return value

    def threshold(self, tau, schedule) -> float:
        """Effective soft threshold ``lam_tau sigma_tau^2``."""
        _, sigma = schedule.rates(tau)
        if self.lambda_fn is None:
            return self.lambda0 * sigma
        return self.lam(tau, schedule) * sigma**2

    def _check(self, x):
        if self.dim is not None and np.shape(x)[-1] != self.dim:
            raise DomainError(f"signal length {np.shape(x)[-1]} != prior dimension {self.dim}")

    def posterior_mean(self, x, tau, schedule) -> np.ndarray:
        self._check(x)
        return soft_threshold(x, self.threshold(tau, schedule))

    def score_vjp(self, x, tau, schedule):
        self._check(x)
        alpha, sigma = schedule.rates(tau)
        if sigma == 0:
            raise DomainError("sparse score needs sigma_tau > 0")
        x = np.asarray(x)
        t = self.threshold(tau, schedule)
        x0 = soft_threshold(x, t)
        s2 = sigma**2
        score = (alpha * x0 - x) / s2
        return score, lambda v: (alpha * soft_threshold_vjp(x, t, v) - v) / s2

    def log_density(self, x, tau, schedule) -> np.ndarray:
        """Unnormalised log-density whose gradient is the score, summed over the last axis."""
        self._check(x)
        alpha, sigma = schedule.rates(tau)
        if sigma == 0:
            raise DomainError("sparse log-density needs sigma_tau > 0")
        mag = np.abs(np.asarray(x))
        t = self.threshold(tau, schedule)
        per = (alpha * 0.5 * np.maximum(mag - t, 0.0) ** 2 - 0.5 * mag**2) / sigma**2
        return np.sum(per, axis=-1)


def sparse_posterior_mean(x_tau, tau, prior: SparsityPrior, schedule) -> np.ndarray:
    return prior.posterior_mean(x_tau, tau, schedule)


def score_sparse(x_tau, tau, prior: SparsityPrior, schedule) -> np.ndarray:
    return prior.score(x_tau, tau, schedule)
