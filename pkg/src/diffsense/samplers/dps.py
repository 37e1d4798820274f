"""Likelihood-guided reverse diffusion (DPS) and joint signal/noise separation.

The likelihood term is approximated through the Tweedie projections of the
current iterates: with ``x0 = E[x0 | x_tau]`` and ``n0 = E[n0 | n_tau]`` the data
misfit ``L = |y - A x0 - n0|^2`` (or its companded counterpart) is
differentiated back to ``(x_tau, n_tau)`` through the denoisers, and
``zeta * grad L`` is subtracted from each prior score. Both chains of a joint
run read the same snapshot before either is moved.

Complex variables follow the ``d/dRe + i d/dIm`` gradient convention, so that
``grad |A x - y|^2 = 2 A^H (A x - y)`` holds for complex ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from ..errors import DivergenceError, DomainError
from ..operators import MeasurementModel, _compand, _compand_derivative, _expand, _expand_derivative
from ..priors.base import ScorePrior
from ..sde import ChainNoise, DiffusionState, NoiseSchedule, TrajectoryConfig, prior_sample, reverse_step, time_grid

__all__ = [
    "GuidanceConfig",
    "SamplerConfig",
    "SeparationProblem",
    "PosteriorEnsemble",
    "StepSnapshot",
    "CLAMP",
    "data_misfit_grads",
    "companded_dc_grad",
    "dps_grad",
    "guided_scores",
    "run_reverse",
    "dps_sample",
    "joint_separate",
]

#: companded operands are clamped to +-CLAMP before expansion
CLAMP = 1.0 - 1e-6


@dataclass(frozen=True)
class GuidanceConfig:
    """Guidance weight ``zeta``; ``adaptive`` divides it by the current residual norm."""

    zeta: float = 1.0
    adaptive: bool = False
    weight_x: float = 1.0
    weight_n: float = 1.0

    def __post_init__(self):
        if not self.zeta > 0:
            raise DomainError("zeta must be positive")
        if self.weight_x < 0 or self.weight_n < 0:
            raise DomainError("per-variable weights must be non-negative")


@dataclass(frozen=True)
class SamplerConfig:
    n_samples: int = 16
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    #: noise streams for the (x, n) chains; swapping them swaps the randomness
    streams: tuple = (0, 1)
    divergence_norm: float = 1e6

    def __post_init__(self):
        if self.n_samples < 1:
            raise DomainError("n_samples must be >= 1")

    @property
    def seed(self) -> int:
        return self.trajectory.seed


@dataclass
class SeparationProblem:
    """Measurement ``y`` under ``model`` with a signal prior and optional structured-noise prior."""

    y: np.ndarray
    model: MeasurementModel
    signal_prior: ScorePrior
    noise_prior: Optional[ScorePrior] = None
    complex_signal: bool = False
    complex_noise: bool = False

    def __post_init__(self):
        self.y = np.asarray(self.y)
        if self.y.shape[-1] != self.model.operator.shape[0]:
            raise DomainError(f"measurement length {self.y.shape[-1]} != operator rows {self.model.operator.shape[0]}")
        for name, prior, length, cplx in (
            ("signal", self.signal_prior, self.signal_length, self.complex_signal),
            ("noise", self.noise_prior, self.noise_length, self.complex_noise),
        ):
            dim = getattr(prior, "dim", None)
            if prior is not None and dim is not None and dim not in (length, 2 * length if cplx else length):
                raise DomainError(f"{name} prior dimension {dim} does not fit signal length {length}")

    @property
    def signal_length(self) -> int:
        return self.model.operator.shape[1]

    @property
    def noise_length(self) -> int:
        return self.model.operator.shape[0]

    def with_measurement(self, y, model: MeasurementModel) -> "SeparationProblem":
        return replace(self, y=np.asarray(y), model=model)


@dataclass
class StepSnapshot:
    """Tweedie estimates seen at one grid point (handed to step callbacks)."""

    index: int
    tau: float
    x0: np.ndarray
    n0: Optional[np.ndarray]
    relative_residual: np.ndarray


@dataclass
class PosteriorEnsemble:
    """``N_s`` posterior draws (plus paired noise draws for joint runs) and provenance."""

    samples: np.ndarray
    noise: Optional[np.ndarray] = None
    tau_of_snapshot: float = 0.0
    seeds: dict = field(default_factory=dict)
    steps: int = 0
    nfe: int = 0
    residual_trace: list = field(default_factory=list)
    clamp_events: int = 0
    meta: dict = field(default_factory=dict)
    problem: Optional[SeparationProblem] = field(default=None, repr=False)

    def __post_init__(self):
        self.samples = np.atleast_2d(self.samples)
        if self.samples.shape[0] < 1:
            raise DomainError("an ensemble needs at least one sample")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    def noise_mean(self) -> Optional[np.ndarray]:
        return None if self.noise is None else self.noise.mean(axis=0)

    def variance(self) -> np.ndarray:
        """Per-coordinate sample variance (total over real and imaginary parts)."""
        ddof = 1 if self.n_samples > 1 else 0
        return np.var(self.samples, axis=0, ddof=ddof)

    def to_record(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "tau_of_snapshot": self.tau_of_snapshot,
            "seeds": self.seeds,
            "steps": self.steps,
            "nfe": self.nfe,
            "clamp_events": self.clamp_events,
            "residual_trace": [float(r) for r in self.residual_trace],
            **self.meta,
        }


# --- likelihood gradients -------------------------------------------------------


def _match_field(g, like):
    """Project a gradient onto the field of ``like`` (real variables keep the real part)."""
    return g if np.iscomplexobj(like) else np.real(g)


def _norm(a):
    a = np.asarray(a)
    return np.sqrt(np.sum(np.abs(a) ** 2, axis=-1))


def data_misfit_grads(model: MeasurementModel, y, x0, n0=None):
    """Gradients of ``|y - A x0 - n0|^2`` w.r.t. ``x0`` and ``n0`` plus the residual ``A x0 + n0 - y``."""
    op = model.operator
    pred = op.apply(x0)
    if n0 is not None:
        pred = pred + n0
    r = pred - y
    gx = _match_field(2.0 * op.adjoint(r), x0)
    gn = None if n0 is None else _match_field(2.0 * r, n0)
    return gx, gn, r


def companded_misfit_grads(model: MeasurementModel, y, x0, n0):
    """Gradients of ``|y - C(E(A x0) + E(n0))|^2``; operands are clamped to ``+-CLAMP`` first.

    Returns ``(gx, gn, residual, clamp_events)``. Clamped entries receive zero
    gradient through the clamp. ``C`` is applied to the sum without a domain
    check since ``E(u) + E(v)`` may legitimately exceed 1 mid-trajectory.
    """
    if np.iscomplexobj(x0) or np.iscomplexobj(n0) or np.iscomplexobj(y):
        raise DomainError("companding is defined for real signals")
    mu = model.mu
    op = model.operator
    u_raw = op.apply(x0)
    v_raw = np.zeros_like(u_raw) if n0 is None else np.asarray(n0)
    events = int(np.count_nonzero(np.abs(u_raw) > CLAMP) + np.count_nonzero(np.abs(v_raw) > CLAMP))
    u = np.clip(u_raw, -CLAMP, CLAMP)
    v = np.clip(v_raw, -CLAMP, CLAMP)
    s = _expand(u, mu) + _expand(v, mu)
    r = _compand(s, mu) - y
    common = 2.0 * r * _compand_derivative(s, mu)
    gu = common * _expand_derivative(u, mu) * (np.abs(u_raw) <= CLAMP)
    gv = common * _expand_derivative(v, mu) * (np.abs(v_raw) <= CLAMP)
    gx = _match_field(op.adjoint(gu), x0)
    return gx, (None if n0 is None else gv), r, events


def dps_grad(x_tau, tau, y, model: MeasurementModel, prior: ScorePrior, schedule: NoiseSchedule) -> np.ndarray:
    """``grad_{x_tau} |y - A x_{0|tau}|^2`` with the gradient carried through the denoiser."""
    if model.companded:
        raise DomainError("dps_grad is for uncompanded models; use companded_dc_grad")
    x0, _, vjp = prior.denoise_vjp(x_tau, tau, schedule)
    gx0, _, _ = data_misfit_grads(model, y, x0)
    return vjp(gx0)


def companded_dc_grad(x_tau, n_tau, tau, y, model: MeasurementModel, priors, schedule: NoiseSchedule):
    """Gradients of the companded data-consistency loss w.r.t. ``(x_tau, n_tau)``.

    ``priors`` is the pair ``(signal_prior, noise_prior)``. Returns
    ``(grad_x, grad_n, clamp_events)``.
    """
    px, pn = priors
    x0, _, vjp_x = px.denoise_vjp(x_tau, tau, schedule)
    n0, _, vjp_n = pn.denoise_vjp(n_tau, tau, schedule)
    gx0, gn0, _, events = companded_misfit_grads(model, y, x0, n0)
    return vjp_x(gx0), vjp_n(gn0), events


def _denoise_all(problem: SeparationProblem, x, n, tau, schedule: NoiseSchedule):
    """Tweedie estimates, prior scores and denoiser VJPs for both chains (the only score evaluations)."""
    x0, sx, vjp_x = problem.signal_prior.denoise_vjp(x, tau, schedule)
    if problem.noise_prior is None:
        return x0, sx, vjp_x, None, None, None
    n0, sn, vjp_n = problem.noise_prior.denoise_vjp(n, tau, schedule)
    return x0, sx, vjp_x, n0, sn, vjp_n


def _guide(problem: SeparationProblem, denoised, guidance: GuidanceConfig):
    """Combine cached denoiser outputs with the misfit gradient of ``problem``."""
    x0, sx, vjp_x, n0, sn, vjp_n = denoised
    model = problem.model
    if model.companded:
        n_arg = n0 if n0 is not None else np.zeros(np.shape(x0)[:-1] + (problem.noise_length,))
        gx0, gn0, r, events = companded_misfit_grads(model, problem.y, x0, n_arg)
    else:
        gx0, gn0, r = data_misfit_grads(model, problem.y, x0, n0)
        events = 0
    zeta = guidance.zeta
    if guidance.adaptive:
        zeta = zeta / np.maximum(_norm(r), 1e-12)[..., None]
    score_x = sx - zeta * guidance.weight_x * vjp_x(gx0)
    score_n = None if n0 is None else sn - zeta * guidance.weight_n * vjp_n(gn0)
    return score_x, score_n, r, events


def guided_scores(problem: SeparationProblem, x, n, tau, schedule: NoiseSchedule, guidance: GuidanceConfig):
    """Posterior scores for both chains from one snapshot.

    Returns ``(score_x, score_n, x0, n0, residual, clamp_events)``; ``score_n``
    and ``n0`` are None when the problem has no noise prior.
    """
    denoised = _denoise_all(problem, x, n, tau, schedule)
    score_x, score_n, r, events = _guide(problem, denoised, guidance)
    return score_x, score_n, denoised[0], denoised[3], r, events


# --- integration ------------------------------------------------------------------------

StepCallback = Callable[[StepSnapshot], Optional[SeparationProblem]]


def _check_divergence(arr, limit, k, tau, name):
    if arr is None:
        return
    norms = _norm(arr)
    bad = ~np.isfinite(norms) | (norms > limit)
    if np.any(bad):
        chain = int(np.flatnonzero(bad)[0])
        raise DivergenceError(
            f"{name} chain left the admissible ball",
            step=k, tau=round(float(tau), 6), chain=chain, norm=float(norms[chain]),
        )


def _relative(r, y):
    return _norm(r) / max(float(np.sqrt(np.sum(np.abs(y) ** 2))), 1e-300)


def run_reverse(problem: SeparationProblem, schedule: NoiseSchedule, config: SamplerConfig, grid: np.ndarray,
                x, n=None, noise=(None, None), callback: StepCallback | None = None):
    """Integrate the guided reverse SDE along ``grid`` (decreasing diffusion times).

    ``x`` and ``n`` carry a leading chain axis and ``noise`` holds their
    :class:`ChainNoise` streams. ``callback`` sees the Tweedie snapshot of every
    step before the chains move and may return a replacement problem (used by
    active acquisition to grow the measurement set mid-trajectory); the
    replacement reuses the snapshot's denoiser outputs, so it costs no extra
    score evaluations.

    Returns ``(x, n, problem, trace, clamp_events)``.
    """
    noise_x, noise_n = noise
    trace, clamps = [], 0
    traj = config.trajectory
    for k in range(len(grid) - 1):
        tau, dt = float(grid[k]), float(grid[k] - grid[k + 1])
        denoised = _denoise_all(problem, x, n, tau, schedule)
        sx, sn, r, events = _guide(problem, denoised, config.guidance)
        if callback is not None:
            replacement = callback(StepSnapshot(k, tau, denoised[0], denoised[3], _relative(r, problem.y)))
            if replacement is not None:
                problem = replacement
                sx, sn, r, events = _guide(problem, denoised, config.guidance)
        clamps += events
        trace.append(float(np.mean(_relative(r, problem.y))))
        x_new = reverse_step(
            DiffusionState(x, tau, noise_x), sx, schedule, dt, noise_x, config=traj,
            score_fn=(lambda z, t, _n=n: guided_scores(problem, z, _n, t, schedule, config.guidance)[0])
            if traj.corrector_steps else None,
        ).x
        if n is not None:
            n = reverse_step(
                DiffusionState(n, tau, noise_n), sn, schedule, dt, noise_n, config=traj,
                score_fn=(lambda z, t, _x=x: guided_scores(problem, _x, z, t, schedule, config.guidance)[1])
                if traj.corrector_steps else None,
            ).x
        x = x_new
        _check_divergence(x, config.divergence_norm, k, tau, "signal")
        _check_divergence(n, config.divergence_norm, k, tau, "noise")
    return x, n, problem, trace, clamps


def _initial_chains(problem: SeparationProblem, schedule: NoiseSchedule, config: SamplerConfig):
    noise_x = ChainNoise(config.seed, config.n_samples, stream=config.streams[0])
    x = prior_sample(schedule, (problem.signal_length,), noise_x, problem.complex_signal)
    if problem.noise_prior is None:
        return x, None, (noise_x, None)
    noise_n = ChainNoise(config.seed, config.n_samples, stream=config.streams[1])
    n = prior_sample(schedule, (problem.noise_length,), noise_n, problem.complex_noise)
    return x, n, (noise_x, noise_n)


def _nfe(prior) -> int:
    return int(getattr(prior, "nfe", 0))


def dps_sample(problem: SeparationProblem, config: SamplerConfig, schedule: NoiseSchedule,
               callback: StepCallback | None = None) -> PosteriorEnsemble:
    """Posterior sampling with the signal prior alone (the noise prior, if any, is ignored)."""
    if problem.noise_prior is not None:
        problem = replace(problem, noise_prior=None)
    return _sample(problem, config, schedule, callback)


def joint_separate(problem: SeparationProblem, config: SamplerConfig, schedule: NoiseSchedule,
                   callback: StepCallback | None = None) -> PosteriorEnsemble:
    """Coupled reverse diffusion over ``(x, n)`` sharing one likelihood term."""
    if problem.noise_prior is None:
        raise DomainError("joint separation needs a noise prior")
    return _sample(problem, config, schedule, callback)


def _sample(problem, config, schedule, callback):
    grid = time_grid(schedule, config.trajectory.num_steps)
    x, n, noise = _initial_chains(problem, schedule, config)
    nfe0 = _nfe(problem.signal_prior)
    x, n, final_problem, trace, clamps = run_reverse(problem, schedule, config, grid, x, n, noise, callback)
    return PosteriorEnsemble(
        samples=x,
        noise=n,
        tau_of_snapshot=float(grid[-1]),
        seeds={"seed": config.seed, "streams": list(config.streams[: 2 if n is not None else 1])},
        steps=len(grid) - 1,
        nfe=_nfe(problem.signal_prior) - nfe0,
        residual_trace=trace,
        clamp_events=clamps,
        problem=final_problem,
    )
