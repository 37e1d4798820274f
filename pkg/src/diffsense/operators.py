"""Linear sensing operators, mu-law companding and measurement synthesis.

Every operator maps length-``M`` signals to length-``N`` measurements and acts on
the last axis, so a stack of chains ``(n_chains, M)`` goes through in one call.
DFT kinds use the unitary ``1/sqrt(M)`` normalisation in both directions; for
2-D signals the transform is taken over the image shape and flattened row-major.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .sde import standard_normal

__all__ = [
    "LinearOperator",
    "IdentityOperator",
    "DenseOperator",
    "DFTOperator",
    "AdjointDFTOperator",
    "MaskedDFTOperator",
    "SubsampleOperator",
    "apply",
    "adjoint",
    "CompandingParams",
    "compand",
    "expand",
    "compand_derivative",
    "expand_derivative",
    "MeasurementModel",
    "synthesize",
]


class LinearOperator:
    """Base class: subclasses implement ``_apply`` and ``_adjoint`` on the last axis."""

    kind = "abstract"
    #: rows are orthonormal, so ``A^+ A`` is the projector ``A^H A``
    orthonormal_rows = False

    def __init__(self, n_out: int, n_in: int):
        self.shape = (int(n_out), int(n_in))

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.shape[-1] != self.shape[1]:
            raise DomainError(f"{self.kind}: input length {x.shape[-1]} != {self.shape[1]}")
        return self._apply(x)

    def adjoint(self, y) -> np.ndarray:
        y = np.asarray(y)
        if y.shape[-1] != self.shape[0]:
            raise DomainError(f"{self.kind}: adjoint input length {y.shape[-1]} != {self.shape[0]}")
        return self._adjoint(y)

    def matrix(self) -> np.ndarray:
        """Dense matrix of the operator (for small problems and tests)."""
        return self.apply(np.eye(self.shape[1])).T

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.shape})"


class IdentityOperator(LinearOperator):
    kind = "identity"
    orthonormal_rows = True

    def __init__(self, size: int):
        super().__init__(size, size)

    def _apply(self, x):
        return x.copy()

    def _adjoint(self, y):
        return y.copy()


class DenseOperator(LinearOperator):
    kind = "dense"

    def __init__(self, matrix):
        matrix = np.asarray(matrix)
        if matrix.ndim != 2:
            raise DomainError("dense operator needs a 2-D matrix")
        super().__init__(*matrix.shape)
        self.A = matrix
        self._AH = matrix.conj().T

    def _apply(self, x):
        return x @ self.A.T

    def _adjoint(self, y):
        return y @ self._AH.T

    def matrix(self):
        return self.A.copy()


def _signal_shape(shape) -> tuple:
    shape = (int(shape),) if np.isscalar(shape) else tuple(int(s) for s in shape)
    if len(shape) not in (1, 2):
        raise DomainError("DFT operators support 1-D and 2-D signals")
    return shape


def _fft(x, shape):
    if len(shape) == 1:
        return np.fft.fft(x, norm="ortho", axis=-1)
    lead = x.shape[:-1]
    out = np.fft.fft2(x.reshape(lead + shape), norm="ortho")
    return out.reshape(lead + (-1,))


def _ifft(y, shape):
    if len(shape) == 1:
        return np.fft.ifft(y, norm="ortho", axis=-1)
    lead = y.shape[:-1]
    out = np.fft.ifft2(y.reshape(lead + shape), norm="ortho")
    return out.reshape(lead + (-1,))


class DFTOperator(LinearOperator):
    """Unitary DFT ``F`` over a 1-D or 2-D signal shape."""

    kind = "dft"
    orthonormal_rows = True

    def __init__(self, shape):
        self.signal_shape = _signal_shape(shape)
        size = int(np.prod(self.signal_shape))
        super().__init__(size, size)

    def _apply(self, x):
        return _fft(x, self.signal_shape)

    def _adjoint(self, y):
        return _ifft(y, self.signal_shape)


class AdjointDFTOperator(DFTOperator):
    """``F^H``: maps a range/frequency-domain signal to fast time."""

    kind = "adjoint-dft"

    def _apply(self, x):
        return _ifft(x, self.signal_shape)

    def _adjoint(self, y):
        return _fft(y, self.signal_shape)


class MaskedDFTOperator(LinearOperator):
    """``U F``: keeps the Fourier coefficients where ``mask`` is true (row-major order)."""

    kind = "masked-dft"
    orthonormal_rows = True

    def __init__(self, mask, shape=None):
        mask = np.asarray(mask, dtype=bool).ravel()
        self.signal_shape = _signal_shape(mask.size if shape is None else shape)
        if int(np.prod(self.signal_shape)) != mask.size:
            raise DomainError("mask size does not match signal shape")
        self.mask = mask
        self.index = np.flatnonzero(mask)
        super().__init__(self.index.size, mask.size)

    def _apply(self, x):
        return _fft(x, self.signal_shape)[..., self.index]

    def _adjoint(self, y):
        full = np.zeros(y.shape[:-1] + (self.mask.size,), dtype=complex)
        full[..., self.index] = y
        return _ifft(full, self.signal_shape)


class SubsampleOperator(LinearOperator):
    """``U``: keeps the signal entries where ``mask`` is true."""

    kind = "subsample"
    orthonormal_rows = True

    def __init__(self, mask):
        self.mask = np.asarray(mask, dtype=bool).ravel()
        self.index = np.flatnonzero(self.mask)
        super().__init__(self.index.size, self.mask.size)

    def _apply(self, x):
        return x[..., self.index]

    def _adjoint(self, y):
        full = np.zeros(y.shape[:-1] + (self.mask.size,), dtype=y.dtype)
        full[..., self.index] = y
        return full


def apply(op: LinearOperator, x) -> np.ndarray:
    return op.apply(x)


def adjoint(op: LinearOperator, y) -> np.ndarray:
    return op.adjoint(y)


# --- companding -------------------------------------------------------------


@dataclass(frozen=True)
class CompandingParams:
    mu: float = 255.0

    def __post_init__(self):
        if not self.mu > 0:
            raise DomainError("companding strength mu must be positive")


def _check_unit(x, what):
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0) or not np.all(np.isfinite(x)):
        raise DomainError(f"{what} needs entries in [-1, 1]; normalise first")
    return x


def _compand(x, mu):
    return np.sign(x) * np.log1p(mu * np.abs(x)) / np.log1p(mu)


def _expand(x, mu):
    return np.sign(x) * np.expm1(np.abs(x) * np.log1p(mu)) / mu


def _compand_derivative(x, mu):
    return mu / ((1.0 + mu * np.abs(x)) * np.log1p(mu))


def _expand_derivative(x, mu):
    return np.log1p(mu) * np.exp(np.abs(x) * np.log1p(mu)) / mu


def compand(x, mu: float = 255.0) -> np.ndarray:
    """mu-law compression ``sign(x) ln(1 + mu|x|) / ln(1 + mu)`` on ``[-1, 1]``."""
    return _compand(_check_unit(x, "compand"), mu)


def expand(x, mu: float = 255.0) -> np.ndarray:
    """Inverse of :func:`compand`: ``sign(x) ((1 + mu)^|x| - 1) / mu``."""
    return _expand(_check_unit(x, "expand"), mu)


def compand_derivative(x, mu: float = 255.0) -> np.ndarray:
    return _compand_derivative(_check_unit(x, "compand"), mu)


def expand_derivative(x, mu: float = 255.0) -> np.ndarray:
    return _expand_derivative(_check_unit(x, "expand"), mu)


# --- measurement model --------------------------------------------------------


@dataclass(frozen=True)
class MeasurementModel:
    """``y = A x + n + eps`` (or ``y = C(A x_RF + n_RF) + eps`` when companded).

    Complex measurements get circularly-symmetric noise with per-component
    variance ``noise_std**2 / 2``.
    """

    operator: LinearOperator
    noise_std: float = 0.0
    companded: bool = False
    mu: float = 255.0

    def __post_init__(self):
        if not self.noise_std >= 0:
            raise DomainError("noise_std must be non-negative")
        if self.companded and not self.mu > 0:
            raise DomainError("mu must be positive")

    @property
    def n_measurements(self) -> int:
        return self.operator.shape[0]


def synthesize(model: MeasurementModel, x, n=None, rng=None) -> np.ndarray:
    """Draw a measurement for signal ``x`` and structured noise ``n``."""
    Ax = model.operator.apply(x)
    if n is not None and np.shape(n) != Ax.shape:
        raise DomainError(f"structured noise shape {np.shape(n)} != measurement shape {Ax.shape}")
    clean = Ax if n is None else Ax + np.asarray(n)
    if model.companded:
        if np.iscomplexobj(clean):
            raise DomainError("companding is defined for real signals")
        clean = compand(clean, model.mu)
    if model.noise_std == 0:
        return clean
    if rng is None:
        raise DomainError("noise_std > 0 needs an rng")
    if np.iscomplexobj(clean):
        eps = standard_normal(rng, clean.shape, True) * (model.noise_std / np.sqrt(2.0))
    else:
        eps = standard_normal(rng, clean.shape, False) * model.noise_std
    return clean + eps
