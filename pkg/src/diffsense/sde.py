"""Diffusion-time bookkeeping: schedules, forward perturbation and reverse-SDE steps.

Two schedule kinds are provided. The variance-preserving (VP) schedule uses a
linear ``beta(tau)`` and keeps ``alpha**2 + sigma**2 == 1``; the
variance-exploding (VE) schedule keeps ``alpha == 1`` and grows ``sigma``
geometrically.  All reverse integration runs on a uniform grid from ``T`` down
to a small ``tau_end`` where the perturbed scores are still finite.

Randomness is organised per chain: every chain of an ensemble owns its own
``numpy.random.Generator`` derived from ``(seed, stream, chain_index)`` so that a
chain's trajectory does not depend on how many other chains run beside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import DomainError, NumericalError

__all__ = [
    "NoiseSchedule",
    "TrajectoryConfig",
    "ChainNoise",
    "DiffusionState",
    "rates",
    "perturb",
    "reverse_step",
    "warm_start",
    "prior_sample",
    "time_grid",
    "standard_normal",
]

ScoreFn = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    """Signal/noise rates ``(alpha_tau, sigma_tau)`` of the forward SDE.

    ``kind`` is ``"vp"`` (linear beta between ``beta_min`` and ``beta_max``) or
    ``"ve"`` (``sigma**2 = sigma_min**2 * ((sigma_max/sigma_min)**(2 tau/T) - 1)``).
    """

    kind: str = "vp"
    T: float = 1.0
    beta_min: float = 0.1
    beta_max: float = 20.0
    sigma_min: float = 0.01
    sigma_max: float = 10.0
    tau_end: float = 1e-3

    def __post_init__(self):
        if self.kind not in ("vp", "ve"):
            raise DomainError(f"unknown schedule kind {self.kind!r}")
        if not self.T > 0:
            raise DomainError("horizon T must be positive")
        if self.kind == "vp" and not (0 < self.beta_min < self.beta_max):
            raise DomainError("need 0 < beta_min < beta_max")
        if self.kind == "ve" and not (0 < self.sigma_min < self.sigma_max):
            raise DomainError("need 0 < sigma_min < sigma_max")
        if not (0 < self.tau_end < self.T):
            raise DomainError("tau_end must lie in (0, T)")

    def _check(self, tau):
        tau = np.asarray(tau, dtype=float)
        if np.any(~np.isfinite(tau)) or np.any(tau < 0) or np.any(tau > self.T * (1 + 1e-12)):
            raise DomainError(f"diffusion time outside [0, {self.T}]: {tau}")
        return np.clip(tau, 0.0, self.T)

    def _beta_integral(self, tau):
        return self.beta_min * tau + 0.5 * (self.beta_max - self.beta_min) * tau**2 / self.T

    def rates(self, tau):
        tau = self._check(tau)
        if self.kind == "vp":
            integral = self._beta_integral(tau)
            alpha = np.exp(-0.5 * integral)
            sigma = np.sqrt(-np.expm1(-integral))
        else:
            ratio = self.sigma_max / self.sigma_min
            alpha = np.ones_like(tau)
            sigma = self.sigma_min * np.sqrt(np.expm1(2.0 * tau / self.T * math.log(ratio)))
        if alpha.ndim == 0:
            return float(alpha), float(sigma)
        return alpha, sigma

    def drift(self, tau) -> float:
        """Linear drift coefficient f(tau) of the forward SDE."""
        tau = float(self._check(tau))
        if self.kind == "vp":
            return -0.5 * self.beta(tau)
        return 0.0

    def diffusion_sq(self, tau) -> float:
        """Squared diffusion coefficient g(tau)**2."""
        tau = float(self._check(tau))
        if self.kind == "vp":
            return self.beta(tau)
        log_ratio = math.log(self.sigma_max / self.sigma_min)
        return self.sigma_min**2 * 2.0 * log_ratio / self.T * math.exp(2.0 * tau / self.T * log_ratio)

    def beta(self, tau: float) -> float:
        return self.beta_min + (self.beta_max - self.beta_min) * tau / self.T

    @property
    def terminal_std(self) -> float:
        return self.rates(self.T)[1]


def rates(schedule: NoiseSchedule, tau):
    """Return ``(alpha_tau, sigma_tau)``; raises DomainError outside ``[0, T]``."""
    return schedule.rates(tau)


@dataclass(frozen=True)
class TrajectoryConfig:
    num_steps: int = 200
    corrector_steps: int = 0
    corrector_step_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_steps < 1:
            raise DomainError("num_steps must be >= 1")
        if self.corrector_steps < 0:
            raise DomainError("corrector_steps must be >= 0")
        if not self.corrector_step_scale > 0:
            raise DomainError("corrector_step_scale must be positive")


def time_grid(schedule: NoiseSchedule, num_steps: int, tau_start: float | None = None) -> np.ndarray:
    """Uniform grid from ``tau_start`` (default T) down to ``schedule.tau_end``.

    The step size is that of the full ``num_steps`` grid on ``[tau_end, T]``, so a
    shortened trajectory started at ``tau_start < T`` has proportionally fewer
    steps.
    """
    full = np.linspace(schedule.T, schedule.tau_end, num_steps + 1)
    if tau_start is None or tau_start >= schedule.T:
        return full
    if tau_start <= schedule.tau_end:
        raise DomainError(f"tau_start={tau_start} is not above tau_end={schedule.tau_end}")
    dt = full[0] - full[1]
    n = max(1, int(round((tau_start - schedule.tau_end) / dt)))
    return np.linspace(schedule.tau_end + n * dt, schedule.tau_end, n + 1)


class ChainNoise:
    """Independent, reproducible Gaussian streams for ``n_chains`` chains.

    Chain ``i`` of stream ``s`` is seeded with ``SeedSequence(seed, spawn_key=(s, i))``,
    so draws for a given (seed, stream, chain) never depend on the other chains.
    """

    def __init__(self, seed: int, n_chains: int, stream: int = 0):
        if n_chains < 1:
            raise DomainError("need at least one chain")
        self.seed = int(seed)
        self.stream = int(stream)
        self.generators = [
            np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(self.stream, i)))
            for i in range(n_chains)
        ]

    @property
    def n_chains(self) -> int:
        return len(self.generators)

    def normal(self, shape, is_complex: bool = False) -> np.ndarray:
        shape = tuple(np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
        if is_complex:
            draws = [g.standard_normal((2,) + shape) for g in self.generators]
            return np.stack([d[0] + 1j * d[1] for d in draws])
        return np.stack([g.standard_normal(shape) for g in self.generators])


def standard_normal(rng, shape, is_complex: bool = False) -> np.ndarray:
    """Standard normal draw with unit variance per real component.

    ``rng`` is either a ``numpy.random.Generator`` (``shape`` is the full shape)
    or a :class:`ChainNoise` (``shape`` is the per-chain shape).
    """
    if isinstance(rng, ChainNoise):
        return rng.normal(tuple(shape), is_complex)
    if is_complex:
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return rng.standard_normal(shape)


def _per_chain_shape(x: np.ndarray, rng) -> tuple:
    if isinstance(rng, ChainNoise):
        if x.shape[0] != rng.n_chains:
            raise DomainError(f"state has {x.shape[0]} chains but noise has {rng.n_chains}")
        return x.shape[1:]
    return x.shape


@dataclass
class DiffusionState:
    """A (possibly batched) signal at diffusion time ``tau``.

    When ``rng`` is a :class:`ChainNoise` the leading axis of ``x`` indexes chains.
    """

    x: np.ndarray
    tau: float
    rng: object = field(default=None, repr=False)

    def __post_init__(self):
        if not (self.tau >= 0):
            raise DomainError(f"negative diffusion time {self.tau}")


def perturb(x0, tau, schedule: NoiseSchedule, rng) -> np.ndarray:
    """Draw ``x_tau = alpha_tau x0 + sigma_tau z``."""
    x0 = np.asarray(x0)
    if not np.all(np.isfinite(x0)):
        raise DomainError("x0 must be finite")
    alpha, sigma = schedule.rates(tau)
    if sigma == 0.0:
        return alpha * x0
    z = standard_normal(rng, _per_chain_shape(x0, rng), np.iscomplexobj(x0))
    return alpha * x0 + sigma * z


def prior_sample(schedule: NoiseSchedule, shape, rng, is_complex: bool = False) -> np.ndarray:
    """Start of a fresh reverse trajectory, ``N(0, sigma_T^2 I)``."""
    return schedule.terminal_std * standard_normal(rng, shape, is_complex)


def reverse_step(
    state: DiffusionState,
    score: np.ndarray,
    schedule: NoiseSchedule,
    dt: float,
    rng=None,
    *,
    config: TrajectoryConfig | None = None,
    score_fn: ScoreFn | None = None,
    stochastic: bool = True,
) -> DiffusionState:
    """One Euler-Maruyama step of the reverse SDE, then optional Langevin correction.

    ``x <- x - [f x - g^2 score] dt + g sqrt(dt) xi`` with ``tau <- tau - dt``.
    Corrector steps need ``score_fn`` to re-evaluate the score at the new point.
    """
    if not dt > 0:
        raise DomainError("dt must be positive")
    rng = state.rng if rng is None else rng
    x = state.x
    score = np.asarray(score)
    if score.shape != x.shape:
        raise DomainError(f"score shape {score.shape} != state shape {x.shape}")
    if not np.all(np.isfinite(score)):
        raise NumericalError("non-finite score", tau=state.tau, dt=dt)
    f = schedule.drift(state.tau)
    g2 = schedule.diffusion_sq(state.tau)
    x_new = x - (f * x - g2 * score) * dt
    if stochastic and g2 > 0:
        x_new = x_new + math.sqrt(g2 * dt) * standard_normal(rng, _per_chain_shape(x, rng), np.iscomplexobj(x))
    tau_new = max(state.tau - dt, 0.0)

    if config is not None and config.corrector_steps > 0:
        if score_fn is None:
            raise DomainError("corrector steps need score_fn")
        _, sigma = schedule.rates(tau_new)
        eps = config.corrector_step_scale * sigma**2
        for _ in range(config.corrector_steps):
            s = score_fn(x_new, tau_new)
            if not np.all(np.isfinite(s)):
                raise NumericalError("non-finite score in corrector", tau=tau_new)
            x_new = x_new + eps * s
            if stochastic:
                x_new = x_new + math.sqrt(2 * eps) * standard_normal(
                    rng, _per_chain_shape(x_new, rng), np.iscomplexobj(x_new)
                )
    return replace(state, x=x_new, tau=tau_new, rng=rng)


def warm_start(x_prev_estimate, tau_prime: float, schedule: NoiseSchedule, rng, n_chains: int | None = None) -> DiffusionState:
    """Diffuse a previous estimate forward: ``x_{tau'} ~ N(alpha x~, sigma^2 I)``.

    With a :class:`ChainNoise` the estimate is broadcast to every chain unless it
    already carries a chain axis (signals are 1-D, so a 2-D estimate is per chain).
    """
    if not tau_prime > 0:
        raise DomainError("tau_prime must be positive")
    x_prev = np.asarray(x_prev_estimate)
    if isinstance(rng, ChainNoise):
        n = rng.n_chains if n_chains is None else n_chains
        if x_prev.ndim <= 1:
            x_prev = np.broadcast_to(x_prev, (n,) + x_prev.shape).copy()
    x = perturb(x_prev, tau_prime, schedule, rng)
    return DiffusionState(x=x, tau=float(tau_prime), rng=rng)
