"""Analytic Gaussian and Gaussian-mixture priors with exactly perturbed scores.

Perturbing ``N(mu, Sigma)`` by the forward SDE gives ``N(alpha mu, alpha^2 Sigma + sigma^2 I)``,
so all quantities reduce to solves with the shifted covariance. Covariances are
stored in eigen-form so that the shift is diagonal: identity basis (isotropic
or diagonal), a dense orthonormal basis, or the unitary DFT basis for
stationary (circulant) covariances of 1-D or 2-D signals.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp

from ..errors import DomainError, NumericalError
from .base import ScorePrior, as_complex, as_real

__all__ = ["Covariance", "GaussianPrior", "GmmPrior", "score_gaussian", "score_gmm"]

_LOG_2PI = math.log(2.0 * math.pi)


class Covariance:
    """Symmetric positive-definite covariance ``B diag(eigvals) B^H``."""

    def __init__(self, eigvals, basis=None, spectral_shape=None):
        self.eigvals = np.asarray(eigvals, dtype=float)
        if self.eigvals.ndim != 1:
            raise DomainError("eigvals must be a vector")
        if np.any(~np.isfinite(self.eigvals)) or np.any(self.eigvals <= 0):
            raise DomainError("covariance eigenvalues must be positive and finite")
        self.basis = None if basis is None else np.asarray(basis, dtype=float)
        self.spectral_shape = None if spectral_shape is None else tuple(spectral_shape)
        if self.spectral_shape is not None:
            spec = self.eigvals.reshape(self.spectral_shape)
            flipped = np.roll(np.flip(spec, axis=tuple(range(spec.ndim))), 1, axis=tuple(range(spec.ndim)))
            if not np.allclose(spec, flipped, rtol=1e-12, atol=0):
                raise DomainError("spectrum must be symmetric (S[k] == S[-k]) for a real covariance")

    @classmethod
    def isotropic(cls, variance: float, dim: int) -> "Covariance":
        return cls(np.full(int(dim), float(variance)))

    @classmethod
    def diagonal(cls, variances) -> "Covariance":
        return cls(np.asarray(variances, dtype=float))

    @classmethod
    def dense(cls, matrix) -> "Covariance":
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DomainError("covariance must be square")
        if not np.allclose(matrix, matrix.T, rtol=1e-10, atol=1e-12):
            raise DomainError("covariance must be symmetric")
        w, V = np.linalg.eigh(0.5 * (matrix + matrix.T))
        return cls(w, basis=V)

    @classmethod
    def spectral(cls, spectrum) -> "Covariance":
        """Stationary covariance diagonalised by the unitary DFT over ``spectrum.shape``."""
        spectrum = np.asarray(spectrum, dtype=float)
        return cls(spectrum.ravel(), spectral_shape=spectrum.shape)

    @classmethod
    def coerce(cls, value, dim: int) -> "Covariance":
        if isinstance(value, Covariance):
            cov = value
        else:
            arr = np.asarray(value, dtype=float)
            if arr.ndim == 0:
                cov = cls.isotropic(float(arr), dim)
            elif arr.ndim == 1:
                cov = cls.diagonal(arr)
            else:
                cov = cls.dense(arr)
        if cov.dim != dim:
            raise DomainError(f"covariance dimension {cov.dim} != {dim}")
        return cov

    @property
    def dim(self) -> int:
        return self.eigvals.size

    def to_eig(self, u):
        if self.spectral_shape is not None:
            lead = u.shape[:-1]
            axes = tuple(range(-len(self.spectral_shape), 0))
            c = np.fft.fftn(u.reshape(lead + self.spectral_shape), axes=axes, norm="ortho")
            return c.reshape(lead + (-1,))
        if self.basis is not None:
            return u @ self.basis
        return u

    def from_eig(self, c):
        if self.spectral_shape is not None:
            lead = c.shape[:-1]
            axes = tuple(range(-len(self.spectral_shape), 0))
            u = np.fft.ifftn(c.reshape(lead + self.spectral_shape), axes=axes, norm="ortho")
            return u.real.reshape(lead + (-1,))
        if self.basis is not None:
            return c @ self.basis.T
        return c

    def shifted_eigvals(self, a2: float, s2: float) -> np.ndarray:
        lam = a2 * self.eigvals + s2
        if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
            raise NumericalError("singular effective covariance", a2=a2, s2=s2)
        return lam

    def shifted_solve_quad(self, u, a2: float, s2: float):
        """``(a2 Sigma + s2 I)^{-1} u`` and the quadratic form ``u^T (.)^{-1} u``."""
        lam = self.shifted_eigvals(a2, s2)
        c = self.to_eig(u)
        w = c / lam
        quad = np.sum(np.real(np.conj(c) * w), axis=-1)
        return self.from_eig(w), quad

    def shifted_solve(self, u, a2: float, s2: float):
        lam = self.shifted_eigvals(a2, s2)
        return self.from_eig(self.to_eig(u) / lam)

    def shifted_logdet(self, a2: float, s2: float) -> float:
        return float(np.sum(np.log(self.shifted_eigvals(a2, s2))))

    def gain(self, u, a2: float, s2: float):
        """``Sigma (a2 Sigma + s2 I)^{-1} u``."""
        lam = self.shifted_eigvals(a2, s2)
        return self.from_eig(self.to_eig(u) * (self.eigvals / lam))

    def matrix(self) -> np.ndarray:
        return self.from_eig(self.to_eig(np.eye(self.dim)) * self.eigvals).T

    def sample(self, rng, n: int) -> np.ndarray:
        """``n`` zero-mean draws with this covariance."""
        if self.spectral_shape is not None:
            w = rng.standard_normal((n, self.dim))
            return self.from_eig(self.to_eig(w) * np.sqrt(self.eigvals))
        z = rng.standard_normal((n, self.dim)) * np.sqrt(self.eigvals)
        return self.from_eig(z)


class _RealPrior(ScorePrior):
    """Runs a real-valued implementation on realified complex inputs."""

    dim: int

    def _check(self, xr):
        if xr.shape[-1] != self.dim:
            raise DomainError(f"signal length {xr.shape[-1]} != prior dimension {self.dim}")

    def score_vjp(self, x, tau, schedule):
        xr, cplx = as_real(x)
        self._check(xr)
        s, vjp = self._score_vjp_real(xr, tau, schedule)
        if not cplx:
            return s, vjp
        return as_complex(s), lambda v: as_complex(vjp(as_real(v)[0]))

    def log_density(self, x, tau, schedule) -> np.ndarray:
        xr, _ = as_real(x)
        self._check(xr)
        return self._log_density_real(xr, tau, schedule)

    def posterior_mean(self, x, tau, schedule) -> np.ndarray:
        """Closed-form ``E[x0 | x_tau]``."""
        xr, cplx = as_real(x)
        self._check(xr)
        m = self._posterior_mean_real(xr, tau, schedule)
        return as_complex(m) if cplx else m


class GaussianPrior(_RealPrior):
    """``N(mean, covariance)``; covariance may be a scalar, a diagonal vector, a matrix or a :class:`Covariance`."""

    def __init__(self, mean, covariance):
        self.mean = np.asarray(mean, dtype=float)
        if self.mean.ndim != 1:
            raise DomainError("mean must be a vector")
        self.dim = self.mean.size
        self.cov = Covariance.coerce(covariance, self.dim)

    def _score_vjp_real(self, x, tau, schedule):
        alpha, sigma = schedule.rates(tau)
        a2, s2 = alpha**2, sigma**2
        w = self.cov.shifted_solve(x - alpha * self.mean, a2, s2)
        return -w, lambda v: -self.cov.shifted_solve(v, a2, s2)

    def _log_density_real(self, x, tau, schedule):
        alpha, sigma = schedule.rates(tau)
        a2, s2 = alpha**2, sigma**2
        _, quad = self.cov.shifted_solve_quad(x - alpha * self.mean, a2, s2)
        return -0.5 * (quad + self.cov.shifted_logdet(a2, s2) + self.dim * _LOG_2PI)

    def _posterior_mean_real(self, x, tau, schedule):
        alpha, sigma = schedule.rates(tau)
        return self.mean + alpha * self.cov.gain(x - alpha * self.mean, alpha**2, sigma**2)

    def sample(self, rng, n: int) -> np.ndarray:
        return self.mean + self.cov.sample(rng, n)


class GmmPrior(_RealPrior):
    """Finite mixture ``sum_i w_i N(mu_i, Sigma_i)``.

    ``covariances`` is either one covariance shared by all components or a list
    with one entry per component.
    """

    def __init__(self, weights, means, covariances):
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        if self.weights.ndim != 1 or self.weights.size != self.means.shape[0]:
            raise DomainError("need one weight per component mean")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise DomainError("weights must be non-negative and sum to 1")
        self.dim = self.means.shape[1]
        if isinstance(covariances, (list, tuple)):
            if len(covariances) != self.weights.size:
                raise DomainError("need one covariance per component")
            self.covs = [Covariance.coerce(c, self.dim) for c in covariances]
        else:
            shared = Covariance.coerce(covariances, self.dim)
            self.covs = [shared] * self.weights.size
        with np.errstate(divide="ignore"):
            self._log_w = np.log(self.weights)

    @property
    def n_components(self) -> int:
        return self.weights.size

    def _components(self, x, tau, schedule):
        alpha, sigma = schedule.rates(tau)
        a2, s2 = alpha**2, sigma**2
        logs, solves = [], []
        for log_w, mu, cov in zip(self._log_w, self.means, self.covs):
            w, quad = cov.shifted_solve_quad(x - alpha * mu, a2, s2)
            logs.append(log_w - 0.5 * (quad + cov.shifted_logdet(a2, s2) + self.dim * _LOG_2PI))
            solves.append(w)
        return np.stack(logs, axis=0), solves, (alpha, a2, s2)

    def _responsibilities(self, logs):
        total = logsumexp(logs, axis=0)
        if not np.all(np.isfinite(total)):
            raise NumericalError("all mixture responsibilities underflowed")
        return np.exp(logs - total), total

    def _score_vjp_real(self, x, tau, schedule):
        logs, solves, (_, a2, s2) = self._components(x, tau, schedule)
        resp, _ = self._responsibilities(logs)
        comp_scores = [-w for w in solves]
        score = sum(r[..., None] * s for r, s in zip(resp, comp_scores))

        def vjp(v):
            out = -score * np.sum(score * v, axis=-1, keepdims=True)
            for r, s_i, cov in zip(resp, comp_scores, self.covs):
                out = out + r[..., None] * (s_i * np.sum(s_i * v, axis=-1, keepdims=True) - cov.shifted_solve(v, a2, s2))
            return out

        return score, vjp

    def _log_density_real(self, x, tau, schedule):
        logs, _, _ = self._components(x, tau, schedule)
        return logsumexp(logs, axis=0)

    def _posterior_mean_real(self, x, tau, schedule):
        logs, _, (alpha, a2, s2) = self._components(x, tau, schedule)
        resp, _ = self._responsibilities(logs)
        out = 0.0
        for r, mu, cov in zip(resp, self.means, self.covs):
            out = out + r[..., None] * (mu + alpha * cov.gain(x - alpha * mu, a2, s2))
        return out

    def responsibilities(self, x, tau, schedule) -> np.ndarray:
        """Posterior component probabilities, shape ``(n_components, ...)``."""
        xr, _ = as_real(x)
        self._check(xr)
        logs, _, _ = self._components(xr, tau, schedule)
        return self._responsibilities(logs)[0]

    def sample(self, rng, n: int, return_labels: bool = False):
        labels = rng.choice(self.n_components, size=n, p=self.weights)
        out = np.empty((n, self.dim))
        for k in range(self.n_components):
            idx = np.flatnonzero(labels == k)
            if idx.size:
                out[idx] = self.means[k] + self.covs[k].sample(rng, idx.size)
        return (out, labels) if return_labels else out


def score_gaussian(prior: GaussianPrior, x_tau, tau, schedule) -> np.ndarray:
    return prior.score(x_tau, tau, schedule)


def score_gmm(prior: GmmPrior, x_tau, tau, schedule) -> np.ndarray:
    return prior.score(x_tau, tau, schedule)
