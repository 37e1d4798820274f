"""Measurement-selection rules driven by a posterior ensemble.

All rules score every candidate and return the argmax, breaking ties toward the
lowest candidate index. A candidate is a group of measurement coordinates
(a single pixel, or every Fourier coefficient of one k-space line).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from ..errors import DomainError
from ..operators import LinearOperator

__all__ = [
    "SensingDesign",
    "CandidateSet",
    "kspace_line_candidates",
    "pixel_candidates",
    "measurement_samples",
    "gas_scores",
    "gas_select",
    "pairwise_gmm_entropy",
    "entropy_scores",
    "entropy_select",
    "adasense_free",
    "adasense_constrained_scores",
    "adasense_constrained",
    "argmax_lowest",
]

MODES = ("pixel-mask", "kspace-line-mask", "free-rows")


@dataclass
class SensingDesign:
    """Ordered record of acquired measurements (indices, or row vectors in free mode)."""

    mode: str
    budget: int
    selected: list = field(default_factory=list)
    #: diffusion step at which each selection was made (active diffusion runs)
    acquired_at: list = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"unknown design mode {self.mode!r}")
        if self.budget < 0:
            raise DomainError("budget must be non-negative")

    def add(self, item, step: Optional[int] = None):
        if len(self.selected) >= self.budget:
            raise DomainError("sensing budget exhausted")
        if self.mode != "free-rows":
            item = int(item)
            if item in self.selected:
                raise DomainError(f"index {item} already selected")
        self.selected.append(item)
        self.acquired_at.append(step)

    def indices(self) -> list[int]:
        if self.mode == "free-rows":
            raise DomainError("free-row designs have no indices")
        return list(self.selected)

    def rows(self) -> np.ndarray:
        if self.mode != "free-rows":
            raise DomainError("only free-row designs carry row vectors")
        return np.array(self.selected)

    def to_record(self) -> dict:
        rec = {"mode": self.mode, "budget": self.budget, "acquired_at": self.acquired_at}
        if self.mode == "free-rows":
            rec["rows"] = [list(map(float, r)) for r in self.selected]
        else:
            rec["selected"] = self.selected
        return rec


@dataclass(frozen=True)
class CandidateSet:
    """Unselected candidates; ``groups[c]`` lists the measurement coordinates of candidate ``c``."""

    indices: tuple
    groups: Optional[dict] = None

    def __post_init__(self):
        if len(set(self.indices)) != len(self.indices):
            raise DomainError("duplicate candidates")

    def members(self, c) -> np.ndarray:
        if self.groups is None:
            return np.array([c])
        return np.asarray(self.groups[c])

    def without(self, selected) -> "CandidateSet":
        taken = set(int(s) for s in selected)
        return CandidateSet(tuple(c for c in self.indices if c not in taken), self.groups)

    def __len__(self):
        return len(self.indices)


def kspace_line_candidates(shape, exclude=()) -> CandidateSet:
    """One candidate per row ``ky`` of a 2-D k-space of ``shape`` (coordinates in row-major order)."""
    H, W = shape
    groups = {ky: np.arange(ky * W, (ky + 1) * W) for ky in range(H)}
    return CandidateSet(tuple(range(H)), groups).without(exclude)


def pixel_candidates(size: int, exclude=()) -> CandidateSet:
    return CandidateSet(tuple(range(size))).without(exclude)


def argmax_lowest(scores: Sequence[float], candidates: Sequence[int]) -> int:
    """Candidate with the largest score; ties go to the lowest candidate index."""
    scores = np.asarray(scores, dtype=float)
    best = scores.max()
    return int(min(c for c, s in zip(candidates, scores) if s == best))


def _check(candidates: CandidateSet):
    if len(candidates) == 0:
        raise DomainError("no candidates left")


def measurement_samples(samples, op: LinearOperator) -> np.ndarray:
    """Push each ensemble member through the sensing operator."""
    return op.apply(np.atleast_2d(samples))


def _samples(ensemble):
    return np.atleast_2d(getattr(ensemble, "samples", ensemble))


def gas_scores(ensemble, op: LinearOperator, candidates: CandidateSet) -> np.ndarray:
    """Summed sample variance of each candidate's measurement coordinates."""
    ys = measurement_samples(_samples(ensemble), op)
    if ys.shape[0] < 2:
        raise DomainError("variance selection needs at least two samples")
    var = np.var(ys, axis=0, ddof=1) if not np.iscomplexobj(ys) else np.mean(
        np.abs(ys - ys.mean(axis=0)) ** 2, axis=0) * ys.shape[0] / (ys.shape[0] - 1)
    return np.array([var[candidates.members(c)].sum() for c in candidates.indices])


def gas_select(ensemble, op: LinearOperator, candidates: CandidateSet) -> int:
    """Candidate with the highest predicted measurement variance."""
    _check(candidates)
    return argmax_lowest(gas_scores(ensemble, op, candidates), candidates.indices)


def pairwise_gmm_entropy(samples, sigma: float) -> float:
    """Entropy estimate of ``(1/N) sum_i N(mu_i, sigma^2 I)`` from pairwise distances.

    ``H = (d/2) ln(2 pi e sigma^2) - (1/N) sum_i ln[(1/N) sum_j exp(-|mu_i - mu_j|^2 / (2 sigma^2))]``.
    Exact for a single component and for coincident means. Complex samples are
    treated as real vectors of twice the length.
    """
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    mu = np.atleast_2d(np.asarray(samples))
    if np.iscomplexobj(mu):
        mu = np.concatenate([mu.real, mu.imag], axis=1)
    n, d = mu.shape
    if n < 1:
        raise DomainError("need at least one sample")
    sq = np.sum(mu**2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * mu @ mu.T, 0.0)
    np.fill_diagonal(d2, 0.0)
    inner = logsumexp(-d2 / (2.0 * sigma**2), axis=1) - np.log(n)
    return float(0.5 * d * np.log(2.0 * np.pi * np.e * sigma**2) - inner.mean())


def _default_sigma(ys) -> float:
    """0.1 times the pooled per-coordinate standard deviation of the measurement samples."""
    spread = np.sqrt(np.mean(np.abs(ys - ys.mean(axis=0)) ** 2))
    return 0.1 * spread if spread > 0 else 1.0


def entropy_scores(ensemble, op: LinearOperator, candidates: CandidateSet, sigma: float | None = None) -> np.ndarray:
    ys = measurement_samples(_samples(ensemble), op)
    sigma = _default_sigma(ys) if sigma is None else sigma
    return np.array([pairwise_gmm_entropy(ys[:, candidates.members(c)], sigma) for c in candidates.indices])


def entropy_select(ensemble, op: LinearOperator, candidates: CandidateSet, sigma: float | None = None) -> int:
    """Candidate whose predicted measurements have the largest mixture entropy."""
    _check(candidates)
    return argmax_lowest(entropy_scores(ensemble, op, candidates, sigma), candidates.indices)


def adasense_free(ensemble, r: int, existing_rows=None) -> np.ndarray:
    """Top-``r`` principal directions of the ensemble covariance as new unit-norm rows.

    With ``existing_rows`` the covariance is first projected onto their
    orthogonal complement, so the new rows are orthogonal to the old ones.
    """
    x = _samples(ensemble)
    n, d = x.shape
    if not (1 <= r <= d):
        raise DomainError(f"r={r} must lie in [1, {d}]")
    if n <= r and n < d:
        raise DomainError("need more samples than requested rows")
    xc = x - x.mean(axis=0)
    cov = (xc.conj().T @ xc) / max(n - 1, 1)
    if existing_rows is not None and len(existing_rows):
        R = np.atleast_2d(np.asarray(existing_rows))
        Qr, _ = np.linalg.qr(R.conj().T)
        P = np.eye(d) - Qr @ Qr.conj().T
        cov = P @ cov @ P
    w, V = np.linalg.eigh(0.5 * (cov + cov.conj().T))
    order = np.argsort(w)[::-1][:r]
    rows = V[:, order].T
    # fix the sign so the largest-magnitude entry is positive (deterministic output)
    pivots = np.argmax(np.abs(rows), axis=1)
    phase = rows[np.arange(r), pivots]
    return rows * (np.abs(phase) / phase)[:, None]


def adasense_constrained_scores(ensemble, op: LinearOperator, candidates: CandidateSet) -> np.ndarray:
    """Monte-Carlo ``E[(x - xbar)^H A_c^+ A_c (x - xbar)]`` for each candidate row group of ``op``.

    For orthonormal-row operators ``A_c^+ A_c = A_c^H A_c`` and the objective is
    the energy of the centred samples in the candidate's coordinates. Otherwise
    the projector onto the row space of ``A_c`` is formed explicitly.
    """
    x = _samples(ensemble)
    xc = x - x.mean(axis=0)
    n = x.shape[0]
    if op.orthonormal_rows:
        ys = op.apply(xc)
        energy = np.abs(ys) ** 2
        return np.array([energy[:, candidates.members(c)].sum() / n for c in candidates.indices])
    M = op.matrix()
    out = []
    for c in candidates.indices:
        rows = M[candidates.members(c)]
        Q, _ = np.linalg.qr(rows.conj().T)
        proj = xc @ Q.conj()
        out.append(float(np.sum(np.abs(proj) ** 2) / n))
    return np.array(out)


def adasense_constrained(ensemble, op: LinearOperator, candidates: CandidateSet) -> int:
    _check(candidates)
    return argmax_lowest(adasense_constrained_scores(ensemble, op, candidates), candidates.indices)
