"""Synthetic scenes: FMCW radar with interference, high-dynamic-range RF echoes, and k-space phantoms.

Every generator is a pure function of its scene description and the supplied
``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError
from .operators import AdjointDFTOperator, DFTOperator, IdentityOperator, MeasurementModel, synthesize
from .priors.gaussian import Covariance, GmmPrior
from .sde import standard_normal

__all__ = [
    "InterferenceEvent",
    "RadarScene",
    "random_radar_scene",
    "random_interference",
    "interference_waveform",
    "gen_radar",
    "EchoEvent",
    "HdrRfScene",
    "random_hdr_scene",
    "gen_hdr_rf",
    "PhantomSpec",
    "phantom_prior",
    "gen_phantom",
    "FULL_RADAR_CUBE",
    "SPLITS",
    "split_rng",
    "interference_training_set",
    "gen_phantom_sequence",
]

#: high-resolution radar cube (chirps x antennas x fast-time samples) the desk scale stands in for
FULL_RADAR_CUBE = (32, 256, 1024)

SPLITS = ("train", "eval")


def split_rng(split: str, seed: int) -> np.random.Generator:
    """Generator for ``seed`` within ``split``; the two splits never share a stream."""
    if split not in SPLITS:
        raise DomainError(f"unknown split {split!r}")
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(SPLITS.index(split),)))


# --- radar ------------------------------------------------------------------------------


@dataclass(frozen=True)
class InterferenceEvent:
    """One interference burst in fast time.

    ``family`` is ``"chirp"`` (linear frequency sweep with normalised ``slope``,
    in cycles/sample per sample) or ``"stepped"`` (``n_steps`` constant-frequency
    segments spanning the same sweep).
    """

    slope: float
    start: int
    duration: int
    amplitude: float
    f0: float = 0.0
    phase: float = 0.0
    family: str = "chirp"
    n_steps: int = 8


@dataclass(frozen=True)
class RadarScene:
    n_samples: int = 1024
    targets: tuple = ()  # (range bin, complex amplitude) pairs
    interference: tuple = ()  # InterferenceEvent items
    noise_std: float = 0.01

    def __post_init__(self):
        bins = [int(b) for b, _ in self.targets]
        if len(bins) >= self.n_samples:
            raise DomainError("need fewer targets than samples")
        if len(set(bins)) != len(bins) or any(not 0 <= b < self.n_samples for b in bins):
            raise DomainError("target bins must be unique and inside the range axis")
        for ev in self.interference:
            if ev.start < 0 or ev.duration < 1 or ev.start + ev.duration > self.n_samples:
                raise DomainError("interference burst does not fit in fast time")
            if ev.family not in ("chirp", "stepped"):
                raise DomainError(f"unknown interference family {ev.family!r}")
        if self.noise_std < 0:
            raise DomainError("noise_std must be non-negative")


def interference_waveform(ev: InterferenceEvent, n_samples: int) -> np.ndarray:
    """Tukey-windowed chirp (or stepped-frequency burst) placed at ``ev.start``."""
    t = np.arange(ev.duration, dtype=float)
    if ev.family == "chirp":
        phase = 2 * np.pi * (ev.f0 * t + 0.5 * ev.slope * t**2)
    else:
        seg = np.minimum((t * ev.n_steps / ev.duration).astype(int), ev.n_steps - 1)
        freq = ev.f0 + ev.slope * ev.duration * seg / ev.n_steps
        phase = 2 * np.pi * np.cumsum(freq)
    taper = max(1, ev.duration // 10)
    win = np.ones(ev.duration)
    ramp = 0.5 * (1 - np.cos(np.pi * np.arange(taper) / taper))
    win[:taper] = ramp
    win[ev.duration - taper:] = ramp[::-1]
    out = np.zeros(n_samples, dtype=complex)
    out[ev.start: ev.start + ev.duration] = ev.amplitude * win * np.exp(1j * (phase + ev.phase))
    return out


def random_interference(rng, n_samples: int = 1024, duty: float = 0.5, amplitude=(0.5, 1.5),
                        stepped_fraction: float = 0.3, bandwidth=(0.8, 1.0)) -> tuple:
    """One burst covering ``duty`` of fast time.

    While an interfering chirp is inside the receiver band it sweeps across
    most of it, so the burst sweeps a random ``bandwidth`` fraction of the band
    (centred, random direction) with random start, phase and family.
    """
    duration = int(round(duty * n_samples))
    start = int(rng.integers(0, n_samples - duration + 1))
    sweep = float(rng.choice([-1.0, 1.0]) * rng.uniform(*bandwidth))
    slope = sweep / duration
    f0 = -0.5 * sweep + float(rng.uniform(-0.05, 0.05))
    family = "stepped" if rng.uniform() < stepped_fraction else "chirp"
    ev = InterferenceEvent(slope=slope, start=start, duration=duration, amplitude=float(rng.uniform(*amplitude)),
                           f0=f0, phase=float(rng.uniform(0, 2 * np.pi)), family=family)
    return (ev,)


def interference_training_set(rng, count: int, n_samples: int = 1024, duty: float = 0.5) -> np.ndarray:
    """``count`` random interference bursts as complex rows (training data for the noise prior)."""
    out = np.empty((count, n_samples), dtype=complex)
    for i in range(count):
        out[i] = sum(interference_waveform(ev, n_samples) for ev in random_interference(rng, n_samples, duty))
    return out


def random_radar_scene(rng, n_samples: int = 1024, n_targets: int = 5, amplitude=(5.0, 20.0),
                       duty: float = 0.5, noise_std: float = 0.01, interference: bool = True) -> RadarScene:
    bins = rng.choice(n_samples, size=n_targets, replace=False)
    amps = rng.uniform(*amplitude, size=n_targets) * np.exp(1j * rng.uniform(0, 2 * np.pi, size=n_targets))
    targets = tuple((int(b), complex(a)) for b, a in zip(bins, amps))
    events = random_interference(rng, n_samples, duty) if interference else ()
    return RadarScene(n_samples, targets, events, noise_std)


def gen_radar(scene: RadarScene, rng):
    """Range-domain targets ``x``, fast-time interference ``n`` and ``y = F^H x + n + eps``."""
    N = scene.n_samples
    x = np.zeros(N, dtype=complex)
    for b, a in scene.targets:
        x[int(b)] = a
    n = np.zeros(N, dtype=complex)
    for ev in scene.interference:
        n += interference_waveform(ev, N)
    model = MeasurementModel(AdjointDFTOperator(N), scene.noise_std)
    y = synthesize(model, x, n, rng)
    return x, n, y


# --- HDR RF -----------------------------------------------------------------------------


@dataclass(frozen=True)
class EchoEvent:
    delay: int
    amplitude: float
    decay: float
    frequency: float = 0.08  # cycles/sample


@dataclass(frozen=True)
class HdrRfScene:
    n_samples: int = 2048
    echoes: tuple = ()
    haze_cutoff: float = 0.02  # cycles/sample
    haze_level: float = 0.2  # haze peak relative to signal peak
    noise_std: float = 0.0
    mu: float = 255.0

    def __post_init__(self):
        if any(e.amplitude <= 0 for e in self.echoes):
            raise DomainError("echo amplitudes must be positive")
        if any(not 0 <= e.delay < self.n_samples for e in self.echoes):
            raise DomainError("echo delays must fall inside the record")
        if not 0 < self.haze_cutoff <= 0.5:
            raise DomainError("haze cutoff must lie in (0, 0.5]")


def random_hdr_scene(rng, n_samples: int = 2048, n_echoes: int = 12, dynamic_range_db: float = 60.0,
                     haze_level=(0.1, 0.3), noise_std: float = 0.0) -> HdrRfScene:
    delays = np.sort(rng.choice(n_samples - 16, size=n_echoes, replace=False))
    amps = 10 ** (-rng.uniform(0, dynamic_range_db, size=n_echoes) / 20)
    amps[0] = 1.0
    amps[-1] = 10 ** (-dynamic_range_db / 20)
    echoes = tuple(EchoEvent(int(d), float(a), float(rng.uniform(4, 12)), float(rng.uniform(0.05, 0.12)))
                   for d, a in zip(delays, amps))
    return HdrRfScene(n_samples, echoes, haze_level=float(rng.uniform(*haze_level)), noise_std=noise_std)


def _echo_train(scene: HdrRfScene) -> np.ndarray:
    t = np.arange(scene.n_samples, dtype=float)
    x = np.zeros(scene.n_samples)
    for e in scene.echoes:
        s = t - e.delay
        on = s >= 0
        x[on] += e.amplitude * np.exp(-s[on] / e.decay) * np.sin(2 * np.pi * e.frequency * s[on])
    return x


def _haze(scene: HdrRfScene, rng) -> np.ndarray:
    white = rng.standard_normal(scene.n_samples)
    spec = np.fft.rfft(white)
    f = np.fft.rfftfreq(scene.n_samples)
    spec *= 1.0 / (1.0 + (f / scene.haze_cutoff) ** 8)
    field_ = np.fft.irfft(spec, n=scene.n_samples)
    peak = np.max(np.abs(field_))
    return field_ / peak if peak > 0 else field_


def gen_hdr_rf(scene: HdrRfScene, rng):
    """``(x_RF, n_RF, y)`` with ``y = C(x_RF + n_RF) + eps`` and ``max|x_RF + n_RF| <= 1``."""
    x = _echo_train(scene)
    peak = np.max(np.abs(x))
    n = _haze(scene, rng) * scene.haze_level * (peak if peak > 0 else 1.0)
    scale = np.max(np.abs(x + n))
    if scale > 0:
        x, n = x / scale, n / scale
        # rounding can leave the peak a ulp above 1
        n = np.clip(x + n, -1.0, 1.0) - x
    model = MeasurementModel(IdentityOperator(scene.n_samples), scene.noise_std, companded=True, mu=scene.mu)
    y = synthesize(model, x, n, rng if scene.noise_std > 0 else None)
    return x, n, y


# --- phantoms ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhantomSpec:
    side: int = 32
    weights: tuple = (0.3, 0.3, 0.4)
    shapes: tuple = ("disk", "square", "ring")
    intensity: float = 1.0
    texture_std: float = 0.15
    correlation_length: float = 3.0  # pixels
    noise_std: float = 0.05
    repetition_time_ms: float = 2500.0

    def __post_init__(self):
        if self.side < 2 or self.side & (self.side - 1):
            raise DomainError("phantom side length must be a power of two")
        if len(self.weights) != len(self.shapes):
            raise DomainError("one weight per shape")
        if self.noise_std < 0 or self.texture_std <= 0:
            raise DomainError("noise_std must be >= 0 and texture_std > 0")


def _shape_image(kind: str, side: int) -> np.ndarray:
    c = (side - 1) / 2.0
    yy, xx = np.mgrid[0:side, 0:side]
    r = np.hypot(yy - c, xx - c) / side
    if kind == "disk":
        img = r < 0.3
    elif kind == "square":
        img = (np.abs(yy - c) < 0.25 * side) & (np.abs(xx - c) < 0.25 * side)
    elif kind == "ring":
        img = (r > 0.18) & (r < 0.38)
    elif kind == "bars":
        img = ((xx // max(side // 8, 1)) % 2 == 0) & (np.abs(yy - c) < 0.35 * side)
    else:
        raise DomainError(f"unknown phantom shape {kind!r}")
    return img.astype(float)


def _texture_spectrum(spec: PhantomSpec) -> np.ndarray:
    k = np.fft.fftfreq(spec.side)
    kk = np.hypot(k[:, None], k[None, :])
    s = 1.0 / (1.0 + (2 * np.pi * spec.correlation_length * kk) ** 2) ** 1.5
    return s * (spec.texture_std**2 / s.mean())


def phantom_prior(spec: PhantomSpec) -> GmmPrior:
    """GMM over images: one component per shape, sharing a stationary texture covariance."""
    means = np.stack([spec.intensity * _shape_image(s, spec.side).ravel() for s in spec.shapes])
    cov = Covariance.spectral(_texture_spectrum(spec))
    return GmmPrior(np.asarray(spec.weights, dtype=float), means, cov)


def gen_phantom(spec: PhantomSpec, rng):
    """Image ``x`` drawn from :func:`phantom_prior`, its noisy full k-space and metadata."""
    prior = phantom_prior(spec)
    x, label = prior.sample(rng, 1, return_labels=True)
    x = x[0]
    kspace = DFTOperator((spec.side, spec.side)).apply(x)
    if spec.noise_std > 0:
        kspace = kspace + standard_normal(rng, kspace.shape, True) * (spec.noise_std / np.sqrt(2.0))
    meta = {
        "component": int(label[0]),
        "shape": spec.shapes[int(label[0])],
        "line_repetition_time_ms": [spec.repetition_time_ms] * spec.side,
        "spec": asdict(spec),
    }
    return x, kspace, meta


def gen_phantom_sequence(spec: PhantomSpec, rng, frames: int, drift: float = 0.05):
    """Slowly varying phantom frames and their noisy full k-space.

    One shape component is drawn; its texture rotates between two independent
    prior draws, ``t_k = cos(k drift) a + sin(k drift) b``, so every frame is
    itself an exact draw from that component.
    """
    if frames < 1:
        raise DomainError("need at least one frame")
    prior = phantom_prior(spec)
    comp = int(rng.choice(len(spec.weights), p=np.asarray(spec.weights) / np.sum(spec.weights)))
    cov = prior.covs[comp]
    a, b = cov.sample(rng, 2)
    op = DFTOperator((spec.side, spec.side))
    xs, ks = [], []
    for k in range(frames):
        x = prior.means[comp] + np.cos(k * drift) * a + np.sin(k * drift) * b
        kspace = op.apply(x)
        if spec.noise_std > 0:
            kspace = kspace + standard_normal(rng, kspace.shape, True) * (spec.noise_std / np.sqrt(2.0))
        xs.append(x)
        ks.append(kspace)
    return np.array(xs), np.array(ks), {"component": comp, "shape": spec.shapes[comp], "drift": drift}
