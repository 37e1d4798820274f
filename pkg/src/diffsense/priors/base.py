"""Common score-prior protocol, Tweedie denoising and small wrappers."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import DomainError
from ..sde import NoiseSchedule

Vjp = Callable[[np.ndarray], np.ndarray]


def as_real(x: np.ndarray) -> tuple[np.ndarray, bool]:
    """Stack real and imaginary parts on the last axis for complex input."""
    x = np.asarray(x)
    if np.iscomplexobj(x):
        return np.concatenate([x.real, x.imag], axis=-1), True
    return x, False


def as_complex(x: np.ndarray) -> np.ndarray:
    half = x.shape[-1] // 2
    return x[..., :half] + 1j * x[..., half:]


def real_inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Inner product on the realified space, summed over the last axis."""
    return np.sum(np.real(np.conj(a) * b), axis=-1)


def tweedie_denoise(score, x_tau, tau, schedule: NoiseSchedule) -> np.ndarray:
    """``x_{0|tau} = (x_tau + sigma^2 score) / alpha``."""
    alpha, sigma = schedule.rates(tau)
    if alpha == 0:
        raise DomainError("Tweedie denoising needs alpha_tau > 0")
    score = np.asarray(score)
    if score.shape != np.shape(x_tau):
        raise DomainError("score and x_tau shapes differ")
    return (np.asarray(x_tau) + sigma**2 * score) / alpha


class ScorePrior:
    """Provider of perturbed scores ``grad log p_tau(x)`` for one signal type.

    Subclasses implement :meth:`score_vjp`, returning the score together with a
    function applying the transpose of its Jacobian. Everything else (Tweedie
    denoising and its vector-Jacobian product, used by likelihood guidance) is
    derived from that. Inputs carry the signal on the last axis and may be batched.
    """

    dim: int

    def score_vjp(self, x, tau, schedule: NoiseSchedule) -> tuple[np.ndarray, Vjp]:
        raise NotImplementedError

    def score(self, x, tau, schedule: NoiseSchedule) -> np.ndarray:
        return self.score_vjp(x, tau, schedule)[0]

    def denoise(self, x, tau, schedule: NoiseSchedule) -> np.ndarray:
        return tweedie_denoise(self.score(x, tau, schedule), x, tau, schedule)

    def posterior_mean(self, x, tau, schedule: NoiseSchedule) -> np.ndarray:
        """``E[x0 | x_tau]``; priors with a direct formula override this."""
        return self.denoise(x, tau, schedule)

    def denoise_vjp(self, x, tau, schedule: NoiseSchedule) -> tuple[np.ndarray, np.ndarray, Vjp]:
        """Return ``(x0, score, vjp)`` with ``vjp(v) = (d x0 / d x)^T v``."""
        alpha, sigma = schedule.rates(tau)
        if alpha == 0:
            raise DomainError("Tweedie denoising needs alpha_tau > 0")
        s, s_vjp = self.score_vjp(x, tau, schedule)
        x0 = (np.asarray(x) + sigma**2 * s) / alpha

        def vjp(v):
            return (v + sigma**2 * s_vjp(v)) / alpha

        return x0, s, vjp


class PointMassPrior(ScorePrior):
    """Degenerate prior ``delta(x - value)``; its perturbed law is ``N(alpha value, sigma^2 I)``."""

    def __init__(self, dim: int, value=0.0, is_complex: bool = False):
        self.dim = int(dim)
        self.value = np.broadcast_to(np.asarray(value, dtype=complex if is_complex else float), (self.dim,))

    def score_vjp(self, x, tau, schedule):
        alpha, sigma = schedule.rates(tau)
        if sigma == 0:
            raise DomainError("point-mass score is undefined at sigma = 0")
        s = -(np.asarray(x) - alpha * self.value) / sigma**2
        return s, lambda v: -np.asarray(v) / sigma**2

    def posterior_mean(self, x, tau, schedule):
        x = np.asarray(x)
        return np.broadcast_to(self.value, x.shape).astype(np.result_type(x, self.value))

    def denoise_vjp(self, x, tau, schedule):
        x = np.asarray(x)
        s = self.score(x, tau, schedule)
        x0 = np.broadcast_to(self.value, x.shape).astype(x.dtype if np.iscomplexobj(x) else self.value.dtype)
        return x0.copy(), s, lambda v: np.zeros_like(v)


class CountingPrior(ScorePrior):
    """Wraps a prior and counts per-signal score evaluations (NFE)."""

    def __init__(self, inner: ScorePrior):
        self.inner = inner
        self.dim = inner.dim
        self.nfe = 0

    def _count(self, x):
        x = np.asarray(x)
        self.nfe += int(np.prod(x.shape[:-1])) if x.ndim > 1 else 1

    def score_vjp(self, x, tau, schedule):
        self._count(x)
        return self.inner.score_vjp(x, tau, schedule)

    def score(self, x, tau, schedule):
        self._count(x)
        return self.inner.score(x, tau, schedule)

    def denoise_vjp(self, x, tau, schedule):
        self._count(x)
        return self.inner.denoise_vjp(x, tau, schedule)
