"""Command-line entry point: ``diffsense <command> --config cfg.toml [--seed N] [--out DIR]``.

Every run writes ``manifest.jsonl`` (run record, one result record per seed,
aggregate record), ``metrics.csv`` (fixed, versioned schema; no wall time so
reruns are byte-identical) and a dataset container of raw outputs.

Exit codes: 0 success, 1 other library error, 2 invalid configuration (the
JSON error record names the field), 3 sampler divergence (details written to
``diagnostics.json``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .active import LineAcquisition, ads_run, random_run, restart_run
from .config import ConfigError, ExperimentConfig, PriorSection, load_config
from .dataset import save_dataset
from .errors import DiffsenseError, DivergenceError, DomainError
from .metrics import aggregate, gcnr, noise_floor, nmse, psnr
from .operators import (
    AdjointDFTOperator,
    DFTOperator,
    IdentityOperator,
    MaskedDFTOperator,
    MeasurementModel,
    compand,
    expand,
)
from .priors import (
    Covariance,
    GaussianPrior,
    GmmPrior,
    ScoreNet,
    SparsityPrior,
    TrainingConfig,
    dsm_train,
    load_scorenet,
    save_scorenet,
)
from .priors.base import CountingPrior
from .samplers.dps import CLAMP
from .samplers import (
    GuidanceConfig,
    SamplerConfig,
    SeparationProblem,
    SequentialConfig,
    joint_separate,
    sequential_pipeline,
)
from .scenarios import (
    PhantomSpec,
    gen_hdr_rf,
    gen_phantom,
    gen_phantom_sequence,
    gen_radar,
    interference_training_set,
    phantom_prior,
    random_hdr_scene,
    random_radar_scene,
    split_rng,
)

__all__ = ["main", "CSV_COLUMNS", "SCHEMA_VERSION", "write_metrics_csv", "COMMANDS"]

SCHEMA_VERSION = 1
#: fixed metrics schema; units in brackets
CSV_COLUMNS = (
    "schema_version",
    "command",
    "scenario",
    "rule",
    "seed",
    "nmse",
    "mse",
    "psnr[dB]",
    "gcnr",
    "noise_floor[dB]",
    "floor_gain[dB]",
    "target_retention[dB]",
    "residual",
    "loss",
    "nfe",
    "steps",
)
_METRIC_KEYS = {
    "nmse": "nmse",
    "mse": "mse",
    "psnr[dB]": "psnr_db",
    "gcnr": "gcnr",
    "noise_floor[dB]": "noise_floor_db",
    "floor_gain[dB]": "floor_gain_db",
    "target_retention[dB]": "target_retention_db",
    "residual": "residual",
    "loss": "loss",
    "nfe": "nfe",
    "steps": "steps",
}
COMMANDS = ("generate", "train", "separate", "active", "sequential", "eval")


# --- helpers -----------------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def write_metrics_csv(path, command: str, scenario: str, rule: str, rows: list[dict], agg: dict) -> None:
    """Per-seed rows followed by ``mean`` and ``std`` rows; floats written with ``repr`` (round-trip exact)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)

    def line(seed_label, getter):
        out = [SCHEMA_VERSION, command, scenario, rule, seed_label]
        for col in CSV_COLUMNS[5:]:
            out.append(_fmt(getter(_METRIC_KEYS[col])))
        w.writerow(out)

    for row in rows:
        line(row["seed"], row.get)
    for stat in ("mean", "std"):
        line(stat, lambda k, _s=stat: agg.get(f"{k}_{_s}"))
    Path(path).write_text(buf.getvalue())


def _present_keys(rows: list[dict]) -> list[str]:
    keys = []
    for k in _METRIC_KEYS.values():
        if all(r.get(k) is not None for r in rows):
            keys.append(k)
    return keys


def _aggregate(rows: list[dict]) -> dict:
    return aggregate(rows, _present_keys(rows)) if rows else {}


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, complex):
        return [value.real, value.imag]
    return value


class Run:
    """Collects per-seed rows, manifest extras and raw output arrays for one command."""

    def __init__(self, command: str, cfg: ExperimentConfig, rule: str = ""):
        self.command = command
        self.cfg = cfg
        self.rule = rule
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.rows: list[dict] = []
        self.extras: list[dict] = []
        self.arrays: list[tuple[str, np.ndarray]] = []
        self.started = time.perf_counter()

    def add(self, seed: int, metrics: dict, extra: dict | None = None, arrays: dict | None = None):
        self.rows.append({"seed": seed, **metrics})
        self.extras.append(extra or {})
        for name, arr in (arrays or {}).items():
            self.arrays.append((f"{name}/{seed}", np.asarray(arr)))

    def finish(self) -> dict:
        agg = _aggregate(self.rows)
        write_metrics_csv(self.out / "metrics.csv", self.command, self.cfg.scenario, self.rule, self.rows, agg)
        if self.arrays:
            save_dataset(self.out / f"{self.command}_outputs.dsd", self.arrays,
                         {"split": self.cfg.split, "seeds": self.cfg.seeds, "command": self.command,
                          "config": self.cfg.model_dump(mode="json")})
        records = [{
            "type": "run",
            "command": self.command,
            "schema_version": SCHEMA_VERSION,
            "version": __version__,
            "scenario": self.cfg.scenario,
            "rule": self.rule,
            "config": self.cfg.model_dump(mode="json"),
        }]
        for row, extra in zip(self.rows, self.extras):
            records.append({"type": "result", **_jsonable(row), **_jsonable(extra)})
        records.append({"type": "aggregate", "keys": _present_keys(self.rows), **_jsonable(agg),
                        "wall_time_s": time.perf_counter() - self.started})
        with open(self.out / "manifest.jsonl", "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return agg


def _sampler(cfg: ExperimentConfig, seed: int) -> SamplerConfig:
    s = cfg.sampler
    return SamplerConfig(
        n_samples=s.n_samples,
        trajectory=s.trajectory(seed),
        guidance=GuidanceConfig(zeta=s.zeta, adaptive=s.adaptive, weight_x=s.weight_x, weight_n=s.weight_n),
        divergence_norm=s.divergence_norm,
    )


def _resolve(path: str, base: Path | None) -> Path:
    p = Path(path)
    if not p.is_absolute() and base is not None and not p.exists():
        candidate = base / p
        if candidate.exists():
            return candidate
    return p


def _build_prior(section: PriorSection, dim: int, base: Path | None, schedule):
    """Prior from a config section; ``dim`` is the realified signal width (for network priors)."""
    if section.kind == "sparse":
        return SparsityPrior(lambda0=section.lambda0)
    if section.kind == "gaussian":
        return GaussianPrior(np.zeros(dim), Covariance.isotropic(section.variance, dim))
    if section.kind == "scorenet":
        if not section.scorenet:
            raise ConfigError("a scorenet prior needs a 'scorenet' file path", "scorenet")
        net = load_scorenet(_resolve(section.scorenet, base))
        if net.schedule != schedule:
            raise DomainError("score network was trained with a different schedule")
        return net
    raise ConfigError(f"prior kind {section.kind!r} is not valid here", "kind")


def _phantom_spec(cfg: ExperimentConfig) -> PhantomSpec:
    p = cfg.phantom
    return PhantomSpec(side=p.side, noise_std=p.noise_std, texture_std=p.texture_std,
                       correlation_length=p.correlation_length, repetition_time_ms=p.repetition_time_ms)


def _two_mode_gmm() -> GmmPrior:
    return GmmPrior(np.array([0.4, 0.6]), np.array([[-1.5], [1.5]]), [np.array([0.25]), np.array([0.25])])


# --- commands ------------------------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig, base: Path | None) -> dict:
    run = Run("generate", cfg)
    for seed in cfg.seeds:
        rng = split_rng(cfg.split, seed)
        if cfg.scenario == "radar":
            r = cfg.radar
            scene = random_radar_scene(rng, r.n_samples, r.n_targets, duty=r.duty, noise_std=r.noise_std)
            x, n, y = gen_radar(scene, rng)
            bins = [b for b, _ in scene.targets]
            F = DFTOperator(r.n_samples)
            metrics = {"noise_floor_db": noise_floor(F.apply(y), bins)}
            arrays = {"x": x, "n": n, "y": y, "bins": np.array(bins, dtype=np.int64)}
            extra = {"targets": [[b, a] for b, a in scene.targets],
                     "interference": [asdict(ev) for ev in scene.interference]}
        elif cfg.scenario == "hdr":
            h = cfg.hdr
            scene = random_hdr_scene(rng, h.n_samples, h.n_echoes, h.dynamic_range_db, noise_std=h.noise_std)
            scene = replace(scene, mu=h.mu)
            x, n, y = gen_hdr_rf(scene, rng)
            metrics, arrays, extra = {}, {"x": x, "n": n, "y": y}, {"echoes": [asdict(e) for e in scene.echoes]}
        elif cfg.scenario == "phantom":
            x, kspace, meta = gen_phantom(_phantom_spec(cfg), rng)
            metrics, arrays, extra = {}, {"x": x, "kspace": kspace}, meta
        else:
            x = _two_mode_gmm().sample(rng, cfg.train.n_train)
            metrics, arrays, extra = {}, {"x": x}, {}
        run.add(seed, metrics, extra, arrays)
    return run.finish()


def cmd_train(cfg: ExperimentConfig, base: Path | None) -> dict:
    t = cfg.train
    schedule = cfg.schedule.build()
    run = Run("train", cfg)
    for seed in cfg.seeds:
        rng = split_rng("train", t.data_seed + seed)
        if t.target == "interference":
            data = interference_training_set(rng, t.n_train, cfg.radar.n_samples, cfg.radar.duty)
            width = 2 * cfg.radar.n_samples
            real = np.concatenate([data.real, data.imag], axis=1)
        else:
            real = _two_mode_gmm().sample(rng, t.n_train)
            width = 1
        variance = float(np.mean(real**2)) if t.skip else 0.0
        net = ScoreNet(width, hidden=t.hidden, embed_dim=t.embed_dim, schedule=schedule, seed=seed,
                       data_variance=variance)
        tc = TrainingConfig(steps=t.steps, batch_size=t.batch_size, learning_rate=t.learning_rate,
                            final_learning_rate=t.final_learning_rate, clip_norm=t.clip_norm, seed=seed)
        dsm_train(net, real, schedule, tc)
        name = t.output if len(cfg.seeds) == 1 else f"{Path(t.output).stem}_{seed}{Path(t.output).suffix}"
        save_scorenet(net, run.out / name)
        tail = net.loss_history[-min(100, len(net.loss_history)):] if net.loss_history else []
        run.add(seed, {"loss": float(np.mean(tail)) if tail else None, "steps": t.steps},
                {"file": name, "n_params": net.n_params, "data_variance": variance},
                {"loss_history": np.asarray(net.loss_history, dtype=float)})
    return run.finish()


def _separate_radar(cfg, base, schedule, seed):
    r = cfg.radar
    rng = split_rng(cfg.split, seed)
    scene = random_radar_scene(rng, r.n_samples, r.n_targets, duty=r.duty, noise_std=r.noise_std)
    x, n, y = gen_radar(scene, rng)
    bins = [b for b, _ in scene.targets]
    model = MeasurementModel(AdjointDFTOperator(r.n_samples), r.noise_std)
    counting = CountingPrior(_build_prior(cfg.noise_prior, 2 * r.n_samples, base, schedule))
    prob = SeparationProblem(y, model, _build_prior(cfg.prior, 2 * r.n_samples, base, schedule), counting,
                             complex_signal=True, complex_noise=True)
    ens = joint_separate(prob, _sampler(cfg, seed), schedule)
    x_hat, n_hat = ens.mean(), ens.noise_mean()
    F = DFTOperator(r.n_samples)
    before = noise_floor(F.apply(y), bins)
    after = noise_floor(F.apply(y - n_hat), bins)
    profile = F.apply(y - n_hat)
    target_power = float(np.sum(np.abs(x[bins]) ** 2))
    retention = 10 * np.log10(np.sum(np.abs(profile[bins]) ** 2) / target_power) if target_power > 0 else None
    resid = float(np.linalg.norm(y - model.operator.apply(x_hat) - n_hat) / np.linalg.norm(y))
    metrics = {
        "nmse": nmse(x_hat, x) if np.any(x) else None,
        "noise_floor_db": after,
        "floor_gain_db": before - after,
        "target_retention_db": retention,
        "residual": resid,
        "nfe": counting.nfe,
        "steps": ens.steps,
    }
    extra = {"floor_before_db": before, "oracle_floor_db": noise_floor(F.apply(y - n), bins),
             "sampler": ens.to_record()}
    return metrics, extra, {"x_hat": x_hat, "n_hat": n_hat}


def _lowpass_prior(n_samples: int, cutoff: float, variance: float) -> GaussianPrior:
    f = np.fft.fftfreq(n_samples)
    shape = 1.0 / (1.0 + (np.abs(f) / cutoff) ** 8) + 1e-4
    return GaussianPrior(np.zeros(n_samples), Covariance.spectral(variance * shape / shape.mean()))


def _separate_hdr(cfg, base, schedule, seed):
    """Companded separation: the chains live in the companded domain, ``x~ = C(x_RF)`` and ``n~ = C(n_RF)``."""
    h = cfg.hdr
    rng = split_rng(cfg.split, seed)
    scene = replace(random_hdr_scene(rng, h.n_samples, h.n_echoes, h.dynamic_range_db, noise_std=h.noise_std),
                    mu=h.mu)
    x, n, y = gen_hdr_rf(scene, rng)
    xc, nc = compand(x, h.mu), compand(n, h.mu)
    model = MeasurementModel(IdentityOperator(h.n_samples), max(h.noise_std, 1e-3), companded=True, mu=h.mu)
    noise_prior = CountingPrior(_lowpass_prior(h.n_samples, scene.haze_cutoff, float(np.var(nc)) or 1e-2))
    prob = SeparationProblem(y, model, _build_prior(cfg.prior, h.n_samples, base, schedule), noise_prior)
    ens = joint_separate(prob, _sampler(cfg, seed), schedule)
    x_hat, n_hat = ens.mean(), ens.noise_mean()
    env = np.abs(expand(np.clip(x_hat, -CLAMP, CLAMP), h.mu))
    tissue = np.abs(x) > 1e-3 * np.max(np.abs(x)) if np.any(x) else np.zeros(x.size, bool)
    both = tissue.any() and (~tissue).any()
    raw = np.abs(expand(y, h.mu))
    metrics = {
        "nmse": nmse(x_hat, xc) if np.any(x) else None,
        "gcnr": gcnr(env[tissue], env[~tissue]) if both else None,
        "residual": float(ens.residual_trace[-1]) if ens.residual_trace else None,
        "nfe": noise_prior.nfe,
        "steps": ens.steps,
    }
    extra = {"sampler": ens.to_record(), "gcnr_before": gcnr(raw[tissue], raw[~tissue]) if both else None,
             "haze_nmse": nmse(n_hat, nc) if np.any(n) else None}
    return metrics, extra, {"x_hat": x_hat, "n_hat": n_hat}


def cmd_separate(cfg: ExperimentConfig, base: Path | None) -> dict:
    if cfg.scenario not in ("radar", "hdr"):
        raise ConfigError("separate runs on the radar or hdr scenario", "scenario")
    schedule = cfg.schedule.build()
    run = Run("separate", cfg)
    for seed in cfg.seeds:
        fn = _separate_radar if cfg.scenario == "radar" else _separate_hdr
        run.add(seed, *fn(cfg, base, schedule, seed))
    return run.finish()


def cmd_active(cfg: ExperimentConfig, base: Path | None) -> dict:
    if cfg.scenario != "phantom":
        raise ConfigError("active runs on the phantom scenario", "scenario")
    a = cfg.active
    spec = _phantom_spec(cfg)
    prior = phantom_prior(spec)
    schedule = cfg.schedule.build()
    run = Run("active", cfg, rule=a.rule if a.rule == "random" else f"{a.rule}-{a.engine}")
    for seed in cfg.seeds:
        rng = split_rng(cfg.split, seed)
        x, kspace, meta = gen_phantom(spec, rng)
        acq = LineAcquisition(kspace, (spec.side, spec.side), spec.noise_std)
        sc = _sampler(cfg, seed)
        counting = CountingPrior(prior)
        if a.rule == "random":
            ens, design = random_run(acq, counting, schedule, a.budget, sc, split_rng("eval", 10_000 + seed),
                                     initial=a.initial_lines)
        elif a.engine == "ads":
            ens, design = ads_run(acq, counting, schedule, a.budget, sc, a.rule, a.initial_lines, a.sigma)
        else:
            ens, design = restart_run(acq, counting, schedule, a.budget, sc, a.rule, a.initial_lines, a.sigma)
        x_hat = ens.mean()
        metrics = {
            "nmse": nmse(x_hat, x),
            "mse": float(np.mean((x_hat - x) ** 2)),
            "psnr_db": psnr(x_hat, x),
            "nfe": ens.nfe,
            "steps": ens.steps,
        }
        run.add(seed, metrics, {"design": design.to_record(), "component": meta["component"],
                                "line_repetition_time_ms": meta["line_repetition_time_ms"][0]},
                {"x_hat": x_hat, "mask": acq.mask(design.selected).reshape(spec.side, spec.side)})
    return run.finish()


def cmd_sequential(cfg: ExperimentConfig, base: Path | None) -> dict:
    if cfg.scenario != "phantom":
        raise ConfigError("sequential runs on the phantom scenario", "scenario")
    s = cfg.sequence
    spec = _phantom_spec(cfg)
    prior = phantom_prior(spec)
    schedule = cfg.schedule.build()
    run = Run("sequential", cfg)
    seq_cfg = SequentialConfig(tau_prime=s.tau_prime, transition_order=s.transition_order,
                               fallback_threshold=s.fallback_threshold)
    for seed in cfg.seeds:
        rng = split_rng(cfg.split, seed)
        xs, ks, meta = gen_phantom_sequence(spec, rng, s.frames, s.drift)
        n_lines = max(1, int(round(s.sampling_fraction * spec.side)))
        lines = np.sort(rng.choice(spec.side, n_lines, replace=False))
        mask = np.zeros((spec.side, spec.side), dtype=bool)
        mask[lines] = True
        mask = mask.ravel()
        model = MeasurementModel(MaskedDFTOperator(mask, (spec.side, spec.side)), spec.noise_std)
        frames = [k[mask] for k in ks]
        template = SeparationProblem(frames[0], model, prior)
        ens = sequential_pipeline(frames, template, schedule, _sampler(cfg, seed), seq_cfg)
        errs = [nmse(e.mean(), x) for e, x in zip(ens, xs)]
        metrics = {
            "nmse": float(np.mean(errs)),
            "nfe": int(sum(e.nfe for e in ens)),
            "steps": float(np.mean([e.steps for e in ens])),
        }
        extra = {"frame_nmse": errs, "frame_steps": [e.steps for e in ens],
                 "fallback_count": ens[-1].meta["fallback_count"], "lines": lines.tolist(), **meta}
        run.add(seed, metrics, extra, {"x_hat": np.array([e.mean() for e in ens])})
    return run.finish()


def cmd_eval(manifest: Path, out: Path) -> dict:
    """Recompute aggregates from the per-seed records of a manifest and compare to the stored ones."""
    records = [json.loads(line) for line in manifest.read_text().splitlines() if line.strip()]
    head = next((r for r in records if r.get("type") == "run"), None)
    stored = next((r for r in records if r.get("type") == "aggregate"), None)
    if head is None or stored is None:
        raise DomainError(f"{manifest} is not a run manifest")
    rows = []
    for r in records:
        if r.get("type") != "result":
            continue
        row = {"seed": r["seed"]}
        for k in _METRIC_KEYS.values():
            v = r.get(k)
            row[k] = float(v) if isinstance(v, str) else v
        rows.append(row)
    agg = _aggregate(rows)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "eval_metrics.csv", head["command"], head["scenario"], head.get("rule", ""), rows, agg)
    mismatched = sorted(k for k in agg if _jsonable(agg[k]) != stored.get(k))
    if mismatched:
        raise DomainError(f"recomputed aggregates differ from the manifest: {', '.join(mismatched)}")
    return agg


# --- entry point -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffsense", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name == "eval":
            p.add_argument("manifest", nargs="?", help="manifest.jsonl (default: <out>/manifest.jsonl)")
            p.add_argument("--config", help="config whose 'out' locates the manifest")
        else:
            p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--seed", type=int, help="run this single seed instead of the configured list")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--rule", choices=("gas", "entropy", "adasense", "random"), help="selection rule (active)")
        p.add_argument("--frames", type=int, help="number of frames (sequential)")
    return parser


def _emit(record: dict, stream=None):
    print(json.dumps(_jsonable(record), sort_keys=True), file=stream or sys.stdout)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out) if args.out else None
    try:
        if args.command == "eval":
            if args.manifest:
                manifest = Path(args.manifest)
            else:
                if not (args.config or args.out):
                    raise ConfigError("eval needs a manifest path, --out or --config", "manifest")
                root = out_dir or Path(load_config(args.config).out)
                manifest = root / "manifest.jsonl"
            agg = cmd_eval(manifest, out_dir or manifest.parent)
            _emit({"status": "ok", "command": "eval", "reproduced": True, **agg})
            return 0
        cfg = load_config(args.config).with_overrides(args.seed, args.out, args.rule, args.frames)
        out_dir = Path(cfg.out)
        base = Path(args.config).resolve().parent
        handler = {
            "generate": cmd_generate,
            "train": cmd_train,
            "separate": cmd_separate,
            "active": cmd_active,
            "sequential": cmd_sequential,
        }[args.command]
        agg = handler(cfg, base)
        _emit({"status": "ok", "command": args.command, "out": str(out_dir), **agg})
        return 0
    except ConfigError as exc:
        _emit({"status": "error", "kind": "config", "field": exc.field, "message": str(exc)}, sys.stderr)
        return 2
    except DivergenceError as exc:
        diag = {"status": "error", "kind": "divergence", "message": str(exc), **getattr(exc, "context", {})}
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "diagnostics.json").write_text(json.dumps(_jsonable(diag), indent=2, sort_keys=True) + "\n")
            diag["diagnostics"] = str(out_dir / "diagnostics.json")
        _emit(diag, sys.stderr)
        return 3
    except (DiffsenseError, OSError) as exc:
        _emit({"status": "error", "kind": type(exc).__name__, "message": str(exc)}, sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
