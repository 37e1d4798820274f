"""Reconstruction and detection metrics plus per-seed aggregation."""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError

__all__ = ["nmse", "psnr", "gcnr", "noise_floor", "aggregate", "PSNR_INF", "FLOOR_NEG_INF", "GCNR_BINS"]

#: sentinel written in place of +inf PSNR (perfect reconstruction)
PSNR_INF = math.inf
#: sentinel written in place of -inf dB (all-zero profile)
FLOOR_NEG_INF = -math.inf
GCNR_BINS = 256


def _pair(estimate, truth):
    e = np.asarray(estimate).ravel()
    t = np.asarray(truth).ravel()
    if e.shape != t.shape:
        raise DomainError(f"length mismatch: {e.size} vs {t.size}")
    return e, t


def nmse(estimate, truth) -> float:
    """``|e - t|^2 / |t|^2``."""
    e, t = _pair(estimate, truth)
    denom = float(np.sum(np.abs(t) ** 2))
    if denom == 0.0:
        raise DomainError("NMSE undefined for an all-zero reference")
    return float(np.sum(np.abs(e - t) ** 2) / denom)


def psnr(estimate, truth, peak: float | None = None) -> float:
    """``10 log10(peak^2 / MSE)``; ``peak`` defaults to ``max|truth|``. Returns +inf when MSE is 0."""
    e, t = _pair(estimate, truth)
    if peak is None:
        peak = float(np.max(np.abs(t))) if t.size else 0.0
    mse = float(np.mean(np.abs(e - t) ** 2))
    if mse == 0.0:
        return PSNR_INF
    if peak <= 0:
        raise DomainError("PSNR needs a positive peak")
    return float(10.0 * np.log10(peak**2 / mse))


def gcnr(region_a, region_b, bins: int = GCNR_BINS) -> float:
    """Generalized contrast-to-noise ratio: one minus the histogram overlap.

    Both histograms share ``bins`` equal-width bins over the pooled min-max range
    and are normalised to unit mass. When every value is identical a single bin
    is used, giving 0.
    """
    a = np.asarray(region_a, dtype=float).ravel()
    b = np.asarray(region_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise DomainError("gCNR needs two nonempty regions")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi == lo:
        return 0.0
    edges = np.linspace(lo, hi, bins + 1)
    ha, _ = np.histogram(a, edges)
    hb, _ = np.histogram(b, edges)
    overlap = np.minimum(ha / a.size, hb / b.size).sum()
    return float(min(max(1.0 - overlap, 0.0), 1.0))


def noise_floor(range_profile, signal_bins=()) -> float:
    """Median power over non-signal bins, in dB, corrected to the mean power of complex Gaussian noise.

    ``|z|^2`` of circular complex noise is exponential, whose median is
    ``ln 2`` times its mean; dividing by ``ln 2`` makes pure noise of variance
    ``sigma^2`` read ``10 log10(sigma^2)``.
    """
    z = np.asarray(range_profile).ravel()
    keep = np.ones(z.size, dtype=bool)
    idx = np.asarray(list(signal_bins), dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= z.size):
        raise DomainError("signal bins outside the profile")
    keep[idx] = False
    if not keep.any():
        raise DomainError("every bin is marked as signal")
    med = float(np.median(np.abs(z[keep]) ** 2))
    if med == 0.0:
        return FLOOR_NEG_INF
    return float(10.0 * np.log10(med / np.log(2.0)))


def aggregate(rows: list[dict], keys) -> dict:
    """Mean and sample std (ddof=1, 0 for a single row) of each key, reduced in row order."""
    out = {}
    for k in keys:
        vals = np.array([float(r[k]) for r in rows], dtype=float)
        if vals.size == 0:
            raise DomainError("nothing to aggregate")
        out[f"{k}_mean"] = float(np.mean(vals))
        out[f"{k}_std"] = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
    return out
