"""Experiment configuration: TOML files validated against a strict schema.

Unknown keys are rejected everywhere, so a typo fails loudly instead of being
ignored. :func:`load_config` raises :class:`ConfigError` carrying the dotted
path of the offending field.
"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import DiffsenseError
from .sde import NoiseSchedule, TrajectoryConfig

__all__ = [
    "ConfigError",
    "ScheduleConfig",
    "SamplerSection",
    "PriorSection",
    "TrainSection",
    "ActiveSection",
    "RadarSection",
    "HdrSection",
    "PhantomSection",
    "SequenceSection",
    "ExperimentConfig",
    "load_config",
    "parse_config",
]


class ConfigError(DiffsenseError):
    """Invalid configuration; ``field`` is the dotted path of the first bad key."""

    def __init__(self, message: str, field: str = ""):
        super().__init__(message)
        self.field = field


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ScheduleConfig(_Strict):
    kind: Literal["vp", "ve"] = "vp"
    T: float = Field(1.0, gt=0)
    beta_min: float = Field(0.1, gt=0)
    beta_max: float = Field(20.0, gt=0)
    sigma_min: float = Field(0.01, gt=0)
    sigma_max: float = Field(10.0, gt=0)
    tau_end: float = Field(1e-3, gt=0)

    def build(self) -> NoiseSchedule:
        return NoiseSchedule(**self.model_dump())


class SamplerSection(_Strict):
    n_samples: int = Field(8, ge=1)
    steps: int = Field(200, ge=1)
    corrector_steps: int = Field(0, ge=0)
    zeta: float = Field(1.0, gt=0)
    adaptive: bool = False
    weight_x: float = Field(1.0, ge=0)
    weight_n: float = Field(1.0, ge=0)
    divergence_norm: float = Field(1e6, gt=0)

    def trajectory(self, seed: int) -> TrajectoryConfig:
        return TrajectoryConfig(num_steps=self.steps, corrector_steps=self.corrector_steps, seed=seed)


class PriorSection(_Strict):
    """Signal prior. ``scorenet`` names a file written by ``train``; ``lambda0`` scales the sparse threshold."""

    kind: Literal["sparse", "gaussian", "scorenet", "phantom"] = "sparse"
    lambda0: float = Field(0.1, gt=0)
    variance: float = Field(1.0, gt=0)
    scorenet: Optional[str] = None


class TrainSection(_Strict):
    """ScoreNet training for the interference prior (or the 1-D mixture task)."""

    target: Literal["interference", "gmm1d"] = "interference"
    n_train: int = Field(6000, ge=1)
    hidden: Tuple[int, ...] = (256, 256, 256)
    embed_dim: int = Field(64, ge=1)
    steps: int = Field(2000, ge=0)
    batch_size: int = Field(64, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    final_learning_rate: Optional[float] = Field(1e-5, gt=0)
    clip_norm: float = Field(1.0, gt=0)
    skip: bool = True
    #: seed offset separating training data from evaluation scenes
    data_seed: int = 12345
    output: str = "scorenet.bin"

    @model_validator(mode="after")
    def _widths(self):
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")
        return self


class ActiveSection(_Strict):
    rule: Literal["gas", "entropy", "adasense", "random"] = "gas"
    engine: Literal["ads", "restart"] = "restart"
    budget: int = Field(8, ge=1)
    initial_lines: List[int] = Field(default_factory=list)
    r: int = Field(1, ge=1)
    sigma: Optional[float] = Field(None, gt=0)


class RadarSection(_Strict):
    n_samples: int = Field(1024, ge=8)
    n_targets: int = Field(5, ge=0)
    duty: float = Field(0.5, gt=0, le=1)
    noise_std: float = Field(0.01, ge=0)


class HdrSection(_Strict):
    n_samples: int = Field(2048, ge=32)
    n_echoes: int = Field(12, ge=0)
    dynamic_range_db: float = Field(60.0, gt=0)
    noise_std: float = Field(0.0, ge=0)
    mu: float = Field(255.0, gt=0)


class PhantomSection(_Strict):
    side: int = Field(32, ge=2)
    noise_std: float = Field(0.05, ge=0)
    texture_std: float = Field(0.15, gt=0)
    correlation_length: float = Field(3.0, gt=0)
    repetition_time_ms: float = Field(2500.0, gt=0)


class SequenceSection(_Strict):
    frames: int = Field(10, ge=1)
    tau_prime: float = Field(0.2, gt=0)
    transition_order: Literal[1, 2] = 1
    fallback_threshold: float = Field(0.3, gt=0)
    #: texture rotation per frame (radians); small values give slowly varying scenes
    drift: float = Field(0.05, ge=0)
    #: fraction of k-space lines observed in each frame
    sampling_fraction: float = Field(0.5, gt=0, le=1)


class ExperimentConfig(_Strict):
    scenario: Literal["radar", "hdr", "phantom", "gmm1d"] = "radar"
    seeds: List[int] = Field(default_factory=lambda: [0])
    split: Literal["train", "eval"] = "eval"
    out: str = "runs"
    schedule: ScheduleConfig = ScheduleConfig()
    sampler: SamplerSection = SamplerSection()
    prior: PriorSection = PriorSection()
    noise_prior: PriorSection = PriorSection(kind="scorenet")
    train: TrainSection = TrainSection()
    active: ActiveSection = ActiveSection()
    radar: RadarSection = RadarSection()
    hdr: HdrSection = HdrSection()
    phantom: PhantomSection = PhantomSection()
    sequence: SequenceSection = SequenceSection()

    @model_validator(mode="after")
    def _check(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be unique")
        return self

    def with_overrides(self, seed: int | None = None, out: str | None = None, rule: str | None = None,
                       frames: int | None = None) -> "ExperimentConfig":
        data = self.model_dump()
        if seed is not None:
            data["seeds"] = [seed]
        if out is not None:
            data["out"] = out
        if rule is not None:
            data["active"]["rule"] = rule
        if frames is not None:
            data["sequence"]["frames"] = frames
        return parse_config(data)


def _field_path(err: ValidationError) -> tuple[str, str]:
    first = err.errors()[0]
    loc = ".".join(str(p) for p in first["loc"])
    return loc, first["msg"]


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        loc, msg = _field_path(exc)
        raise ConfigError(f"{loc}: {msg}" if loc else msg, loc) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", "") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}", "") from None
    return parse_config(data)
