"""Active acquisition loops over k-space lines.

Three drivers share one acquisition model:

* :func:`ads_run` selects inside a single reverse trajectory, using the Tweedie
  estimates the sampler computes anyway, so its cost is ``N_s * T_steps``
  score evaluations whatever the number of selections.
* :func:`restart_run` samples the posterior to completion before every
  selection and once more for the final reconstruction.
* :func:`random_run` draws lines uniformly without replacement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError
from ..operators import DFTOperator, MaskedDFTOperator, MeasurementModel
from ..priors.base import CountingPrior, ScorePrior
from ..samplers.dps import PosteriorEnsemble, SamplerConfig, SeparationProblem, dps_sample
from ..sde import NoiseSchedule
from .selection import (
    SensingDesign,
    adasense_constrained,
    entropy_select,
    gas_select,
    kspace_line_candidates,
)

__all__ = ["LineAcquisition", "RULES", "select_line", "ads_checkpoints", "ads_run", "restart_run", "random_run"]

RULES = ("gas", "entropy", "adasense")


@dataclass
class LineAcquisition:
    """Noisy full k-space of one image; acquiring a line reveals its row of coefficients."""

    kspace: np.ndarray
    shape: tuple
    noise_std: float

    def __post_init__(self):
        self.kspace = np.asarray(self.kspace).ravel()
        if self.kspace.size != int(np.prod(self.shape)):
            raise DomainError("k-space size does not match image shape")

    @property
    def n_lines(self) -> int:
        return self.shape[0]

    def mask(self, lines) -> np.ndarray:
        H, W = self.shape
        m = np.zeros((H, W), dtype=bool)
        m[list(lines), :] = True
        return m.ravel()

    def problem(self, lines, prior: ScorePrior) -> SeparationProblem:
        m = self.mask(lines)
        op = MaskedDFTOperator(m, self.shape)
        return SeparationProblem(self.kspace[m], MeasurementModel(op, self.noise_std), prior)


def select_line(rule: str, samples, shape, selected, sigma: float | None = None) -> int:
    """Next k-space line under ``rule`` given posterior (or Tweedie) samples."""
    candidates = kspace_line_candidates(shape, exclude=selected)
    full = DFTOperator(shape)
    if rule == "gas":
        return gas_select(samples, full, candidates)
    if rule == "entropy":
        return entropy_select(samples, full, candidates, sigma)
    if rule == "adasense":
        return adasense_constrained(samples, full, candidates)
    raise DomainError(f"unknown selection rule {rule!r}")


def ads_checkpoints(num_steps: int, K: int, head_fraction: float = 0.2) -> tuple[list[int], bool]:
    """Step indices for ``K`` selections spread uniformly over the last ``1 - head_fraction`` of the run.

    Returns ``(steps, adjusted)``; ``adjusted`` is True when rounding to the grid
    produced collisions that had to be shifted to neighbouring steps.
    """
    if K < 0 or K > num_steps:
        raise DomainError("need 0 <= K <= num_steps")
    if K == 0:
        return [], False
    start = head_fraction * num_steps
    span = (1.0 - head_fraction) * num_steps
    ideal = [start + j * span / K for j in range(K)]
    steps, adjusted = [], False
    for t in ideal:
        k = min(int(round(t)), num_steps - 1)
        while k in steps and k < num_steps - 1:
            k += 1
            adjusted = True
        while k in steps:
            k -= 1
            adjusted = True
        steps.append(k)
    return sorted(steps), adjusted or any(abs(s - t) > 0.5 for s, t in zip(sorted(steps), ideal))


def ads_run(acq: LineAcquisition, prior: ScorePrior, schedule: NoiseSchedule, K: int,
            config: SamplerConfig, rule: str = "gas", initial=(), sigma: float | None = None,
            head_fraction: float = 0.2) -> tuple[PosteriorEnsemble, SensingDesign]:
    """Single-trajectory active sampling with ``K`` selections."""
    if rule not in RULES:
        raise DomainError(f"unknown selection rule {rule!r}")
    counting = prior if isinstance(prior, CountingPrior) else CountingPrior(prior)
    design = SensingDesign("kspace-line-mask", budget=len(initial) + K, selected=list(initial),
                           acquired_at=[None] * len(initial))
    checkpoints, adjusted = ads_checkpoints(config.trajectory.num_steps, K, head_fraction)
    todo = set(checkpoints)

    def on_step(snap):
        if snap.index not in todo:
            return None
        line = select_line(rule, snap.x0, acq.shape, design.selected, sigma)
        design.add(line, step=snap.index)
        return acq.problem(design.selected, counting)

    start = counting.nfe
    ens = dps_sample(acq.problem(design.selected, counting), config, schedule, callback=on_step)
    ens.nfe = counting.nfe - start
    ens.meta.update({"rule": rule, "engine": "ads", "checkpoints": checkpoints, "checkpoints_adjusted": adjusted})
    return ens, design


def restart_run(acq: LineAcquisition, prior: ScorePrior, schedule: NoiseSchedule, K: int,
                config: SamplerConfig, rule: str = "gas", initial=(), sigma: float | None = None
                ) -> tuple[PosteriorEnsemble, SensingDesign]:
    """Full posterior sampling before each of ``K`` selections plus a final reconstruction."""
    if rule not in RULES:
        raise DomainError(f"unknown selection rule {rule!r}")
    counting = prior if isinstance(prior, CountingPrior) else CountingPrior(prior)
    design = SensingDesign("kspace-line-mask", budget=len(initial) + K, selected=list(initial),
                           acquired_at=[None] * len(initial))
    start = counting.nfe
    for j in range(K):
        ens = dps_sample(acq.problem(design.selected, counting), config, schedule)
        design.add(select_line(rule, ens.samples, acq.shape, design.selected, sigma), step=j)
    ens = dps_sample(acq.problem(design.selected, counting), config, schedule)
    ens.nfe = counting.nfe - start
    ens.meta.update({"rule": rule, "engine": "restart"})
    return ens, design


def random_run(acq: LineAcquisition, prior: ScorePrior, schedule: NoiseSchedule, K: int,
               config: SamplerConfig, rng, initial=()) -> tuple[PosteriorEnsemble, SensingDesign]:
    """Reconstruction from ``K`` lines drawn uniformly from the unacquired ones."""
    design = SensingDesign("kspace-line-mask", budget=len(initial) + K, selected=list(initial),
                           acquired_at=[None] * len(initial))
    free = [ky for ky in range(acq.n_lines) if ky not in design.selected]
    for ky in rng.choice(free, size=K, replace=False):
        design.add(int(ky))
    counting = prior if isinstance(prior, CountingPrior) else CountingPrior(prior)
    start = counting.nfe
    ens = dps_sample(acq.problem(design.selected, counting), config, schedule)
    ens.nfe = counting.nfe - start
    ens.meta.update({"rule": "random", "engine": "single"})
    return ens, design
