from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from diffsense.errors import DomainError
from diffsense.metrics import nmse, noise_floor
from diffsense.operators import DFTOperator, compand
from diffsense.scenarios import (
    FULL_RADAR_CUBE,
    EchoEvent,
    HdrRfScene,
    InterferenceEvent,
    PhantomSpec,
    RadarScene,
    gen_hdr_rf,
    gen_phantom,
    gen_phantom_sequence,
    gen_radar,
    interference_training_set,
    interference_waveform,
    phantom_prior,
    random_hdr_scene,
    random_radar_scene,
    split_rng,
)
from diffsense.sde import NoiseSchedule


def _same(a, b):
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def test_generators_are_deterministic():
    r1 = gen_radar(random_radar_scene(split_rng("eval", 3)), split_rng("eval", 4))
    r2 = gen_radar(random_radar_scene(split_rng("eval", 3)), split_rng("eval", 4))
    assert _same(r1, r2)
    h1 = gen_hdr_rf(random_hdr_scene(np.random.default_rng(1)), np.random.default_rng(2))
    h2 = gen_hdr_rf(random_hdr_scene(np.random.default_rng(1)), np.random.default_rng(2))
    assert _same(h1, h2)
    p1 = gen_phantom(PhantomSpec(), np.random.default_rng(5))
    p2 = gen_phantom(PhantomSpec(), np.random.default_rng(5))
    assert _same(p1[:2], p2[:2]) and p1[2] == p2[2]
    s1 = gen_phantom_sequence(PhantomSpec(side=8), np.random.default_rng(6), 4)
    s2 = gen_phantom_sequence(PhantomSpec(side=8), np.random.default_rng(6), 4)
    assert _same(s1[:2], s2[:2])


# --- radar ----------------------------------------------------------------------------------


def test_default_fast_time_length_matches_full_cube():
    assert FULL_RADAR_CUBE == (32, 256, 1024)
    assert random_radar_scene(np.random.default_rng(0)).n_samples == FULL_RADAR_CUBE[-1]


def test_clean_radar_recovers_support():
    rng = np.random.default_rng(1)
    scene = random_radar_scene(rng, 512, 6, noise_std=0.0, interference=False)
    x, n, y = gen_radar(scene, rng)
    xr = DFTOperator(512).apply(y)
    assert np.allclose(xr, x, atol=1e-10)
    assert set(np.flatnonzero(np.abs(xr) > 1e-6)) == {b for b, _ in scene.targets}
    assert np.array_equal(n, np.zeros(512))


@pytest.mark.parametrize("seed", range(5))
def test_interference_raises_noise_floor(seed):
    rng = np.random.default_rng(seed)
    scene = random_radar_scene(rng, 1024, 5, duty=0.5)
    clean = RadarScene(scene.n_samples, scene.targets, (), scene.noise_std)
    _, _, y_int = gen_radar(scene, np.random.default_rng(100 + seed))
    _, _, y_clean = gen_radar(clean, np.random.default_rng(100 + seed))
    F = DFTOperator(1024)
    bins = [b for b, _ in scene.targets]
    assert noise_floor(F.apply(y_int), bins) > noise_floor(F.apply(y_clean), bins) + 3.0
    burst = scene.interference[0]
    assert burst.duration == 512


def test_measurement_noise_std():
    rng = np.random.default_rng(2)
    scene = random_radar_scene(rng, 65536, 5, noise_std=0.02)
    x, n, y = gen_radar(scene, rng)
    eps = y - DFTOperator(65536).adjoint(x) - n
    assert abs(np.sqrt(np.mean(np.abs(eps) ** 2)) / 0.02 - 1) < 0.02


def test_interference_waveform_properties():
    ev = InterferenceEvent(slope=0.9 / 200, start=100, duration=200, amplitude=1.3, f0=-0.45)
    w = interference_waveform(ev, 512)
    assert np.all(w[:100] == 0) and np.all(w[300:] == 0)
    assert np.isclose(np.max(np.abs(w)), 1.3)
    stepped = interference_waveform(InterferenceEvent(0.9 / 200, 0, 200, 1.0, -0.45, family="stepped"), 512)
    support = np.flatnonzero(stepped)
    assert support.min() >= 0 and support.max() < 200 and support.size >= 198


def test_radar_scene_validation():
    with pytest.raises(DomainError):
        RadarScene(16, ((3, 1.0), (3, 2.0)))
    with pytest.raises(DomainError):
        RadarScene(16, ((20, 1.0),))
    with pytest.raises(DomainError):
        RadarScene(16, (), (InterferenceEvent(0.01, 10, 10, 1.0),))
    with pytest.raises(DomainError):
        RadarScene(16, (), (InterferenceEvent(0.01, 0, 10, 1.0, family="noise"),))


def test_split_streams_are_disjoint():
    a = split_rng("train", 0).standard_normal(8)
    b = split_rng("eval", 0).standard_normal(8)
    assert not np.allclose(a, b)
    train = interference_training_set(split_rng("train", 0), 4, 256)
    scene = random_radar_scene(split_rng("eval", 0), 256)
    ev_wave = interference_waveform(scene.interference[0], 256)
    assert not any(np.allclose(row, ev_wave) for row in train)
    with pytest.raises(DomainError):
        split_rng("test", 0)


# --- HDR RF ---------------------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_hdr_dynamic_range(seed):
    rng = np.random.default_rng(seed)
    x, n, y = gen_hdr_rf(random_hdr_scene(rng), rng)
    a = np.abs(x)
    assert np.percentile(a, 99.9) / np.percentile(a, 50) > 100
    assert np.max(np.abs(x + n)) <= 1.0 + 1e-12
    assert stats.kurtosis(y) < stats.kurtosis(x + n)
    assert np.allclose(y, compand(x + n))


def test_hdr_zero_echoes():
    x, n, _ = gen_hdr_rf(HdrRfScene(512, ()), np.random.default_rng(0))
    assert np.array_equal(x, np.zeros(512))
    assert np.max(np.abs(n)) <= 1.0


def test_hdr_scene_validation():
    with pytest.raises(DomainError):
        HdrRfScene(64, (EchoEvent(3, -1.0, 4.0),))
    with pytest.raises(DomainError):
        HdrRfScene(64, (EchoEvent(70, 1.0, 4.0),))


# --- phantoms -------------------------------------------------------------------------------


def test_phantom_kspace_inverse():
    spec = PhantomSpec(noise_std=0.0)
    x, k, meta = gen_phantom(spec, np.random.default_rng(0))
    assert x.shape == (1024,)
    assert np.max(np.abs(DFTOperator((32, 32)).adjoint(k) - x)) < 1e-10
    assert meta["shape"] == spec.shapes[meta["component"]]


def test_phantom_repetition_time():
    _, _, meta = gen_phantom(PhantomSpec(), np.random.default_rng(0))
    trs = meta["line_repetition_time_ms"]
    assert len(trs) == 32 and all(t == 2500.0 for t in trs)
    assert all(2200 <= t <= 3000 for t in trs)


def test_phantom_mixture_frequencies():
    spec = PhantomSpec()
    prior = phantom_prior(spec)
    x, labels = prior.sample(np.random.default_rng(1), 10_000, return_labels=True)
    freq = np.bincount(labels, minlength=3) / labels.size
    assert np.all(np.abs(freq - np.array(spec.weights)) < 0.03)
    sched = NoiseSchedule()
    resp = np.concatenate([prior.responsibilities(x[i:i + 1000], 0.05, sched) for i in range(0, 10_000, 1000)], axis=1)
    assert np.all(np.abs(resp.mean(axis=1) - np.array(spec.weights)) < 0.03)


def test_phantom_validation():
    with pytest.raises(DomainError):
        PhantomSpec(side=24)
    with pytest.raises(DomainError):
        PhantomSpec(weights=(0.5, 0.5))
    with pytest.raises(DomainError):
        gen_phantom(PhantomSpec(shapes=("disk", "square", "blob")), np.random.default_rng(0))


def test_phantom_sequence_varies_slowly():
    spec = PhantomSpec(side=16, noise_std=0.0)
    xs, ks, meta = gen_phantom_sequence(spec, np.random.default_rng(2), 10, drift=0.05)
    assert xs.shape == (10, 256) and ks.shape == (10, 256)
    steps = [nmse(xs[i + 1], xs[i]) for i in range(9)]
    assert max(steps) < 0.01
    assert nmse(xs[-1], xs[0]) > max(steps)
    assert np.allclose(DFTOperator((16, 16)).adjoint(ks[3]), xs[3], atol=1e-10)
    with pytest.raises(DomainError):
        gen_phantom_sequence(spec, np.random.default_rng(0), 0)
