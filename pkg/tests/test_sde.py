from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

import oracles
from diffsense.errors import DomainError, NumericalError
from diffsense.priors import GaussianPrior
from diffsense.sde import (
    ChainNoise,
    DiffusionState,
    NoiseSchedule,
    TrajectoryConfig,
    perturb,
    prior_sample,
    rates,
    reverse_step,
    time_grid,
    warm_start,
)

VP = NoiseSchedule()
VE = NoiseSchedule(kind="ve", sigma_min=0.01, sigma_max=10.0)


class _Frozen(NoiseSchedule):
    """Schedule with zero drift and diffusion (degenerate reverse step)."""

    def drift(self, tau):
        return 0.0

    def diffusion_sq(self, tau):
        return 0.0


@pytest.mark.parametrize("sched", [VP, VE], ids=["vp", "ve"])
def test_clean_endpoint(sched):
    alpha, sigma = rates(sched, 0.0)
    assert alpha == pytest.approx(1.0, abs=1e-6)
    assert sigma == pytest.approx(0.0, abs=1e-6)


def test_vp_rates_match_closed_form():
    for tau in (0.0, 0.1, 0.5, 0.9, 1.0):
        a, s = VP.rates(tau)
        ra, rs = oracles.vp_rates(tau)
        assert a == pytest.approx(ra, rel=1e-12)
        assert s == pytest.approx(rs, rel=1e-12, abs=1e-15)


def test_schedule_identities_on_random_times():
    tau = np.random.default_rng(0).uniform(0, 1, 10_000)
    a, s = VP.rates(tau)
    assert np.max(np.abs(a**2 + s**2 - 1)) < 1e-9
    a, s = VE.rates(tau)
    assert np.all(a == 1.0)


def test_ve_midpoint_is_geometric_mean():
    # sigma^2 = smin^2 (r^(2 tau/T) - 1) gives smin * sqrt(r - 1) at T/2
    _, s = VE.rates(0.5)
    assert s == pytest.approx(0.01 * math.sqrt(999.0), rel=1e-12)
    assert s == pytest.approx(math.sqrt(0.01 * 10.0), rel=1e-3)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_monotone_rates(t1, t2):
    lo, hi = sorted((t1, t2))
    for sched in (VP, VE):
        a_lo, s_lo = sched.rates(lo)
        a_hi, s_hi = sched.rates(hi)
        assert a_hi <= a_lo
        if hi > lo + 1e-9:
            assert s_hi > s_lo


@pytest.mark.parametrize("tau", [-0.1, 1.5, float("nan")])
def test_rates_domain_error(tau):
    with pytest.raises(DomainError):
        rates(VP, tau)


def test_schedule_validation():
    with pytest.raises(DomainError):
        NoiseSchedule(kind="cosine")
    with pytest.raises(DomainError):
        NoiseSchedule(beta_min=5, beta_max=1)
    with pytest.raises(DomainError):
        TrajectoryConfig(num_steps=0)


def test_perturb_at_zero_is_identity():
    x0 = np.array([1.5, -2.0, 0.25])
    assert np.array_equal(perturb(x0, 0.0, VP, np.random.default_rng(0)), x0)


@pytest.mark.parametrize("is_complex", [False, True])
def test_perturb_moments(is_complex):
    rng = np.random.default_rng(1)
    tau, n = 0.4, 100_000
    x0 = np.array([1.0, -0.5]) + (1j * np.array([0.3, 0.2]) if is_complex else 0)
    draws = perturb(np.broadcast_to(x0, (n, 2)).copy(), tau, VP, rng)
    alpha, sigma = VP.rates(tau)
    comps = [np.real, np.imag] if is_complex else [np.real]
    for part in comps:
        d = part(draws)
        se = sigma / math.sqrt(n)
        assert np.all(np.abs(d.mean(axis=0) - alpha * part(x0)) < 3 * se)
        assert np.all(np.abs(d.var(axis=0) / sigma**2 - 1) < 0.05)


def test_reverse_step_degenerate_drift():
    sched = _Frozen()
    x = np.array([0.3, -1.0])
    out = reverse_step(DiffusionState(x, 0.5), np.zeros(2), sched, 0.1, np.random.default_rng(0))
    assert np.array_equal(out.x, x)
    assert out.tau == pytest.approx(0.4)


def test_reverse_step_errors():
    st_ = DiffusionState(np.zeros(3), 0.5)
    with pytest.raises(NumericalError):
        reverse_step(st_, np.array([0.0, np.nan, 0.0]), VP, 0.01, np.random.default_rng(0))
    with pytest.raises(DomainError):
        reverse_step(st_, np.zeros(2), VP, 0.01, np.random.default_rng(0))
    with pytest.raises(DomainError):
        reverse_step(st_, np.zeros(3), VP, 0.0, np.random.default_rng(0))


def _integrate(prior, sched, n_chains, steps, seed, dim, corrector=0):
    noise = ChainNoise(seed, n_chains)
    x = prior_sample(sched, (dim,), noise)
    grid = time_grid(sched, steps)
    cfg = TrajectoryConfig(num_steps=steps, corrector_steps=corrector)
    for k in range(steps):
        state = DiffusionState(x, grid[k], noise)
        x = reverse_step(state, prior.score(x, grid[k], sched), sched, grid[k] - grid[k + 1], config=cfg,
                         score_fn=lambda z, t: prior.score(z, t, sched)).x
    return x


def test_reverse_sampling_standard_normal():
    prior = GaussianPrior(np.zeros(4), 1.0)
    x = _integrate(prior, VP, 1000, 200, 0, 4)
    assert np.all(np.abs(x.mean(axis=0)) < 3 / math.sqrt(1000))
    cov = np.cov(x.T)
    assert abs(np.trace(cov) / 4 - 1) < 0.05
    assert np.max(np.abs(cov - np.diag(np.diag(cov)))) < 4 / math.sqrt(1000)


def test_reverse_sampling_with_corrector_runs():
    prior = GaussianPrior(np.zeros(2), 1.0)
    x = _integrate(prior, VP, 200, 50, 0, 2, corrector=2)
    assert np.all(np.isfinite(x))


def test_deterministic_mean_trajectory():
    # without noise injection the reverse update of N(mu, v) tracks alpha_tau mu and moves monotonically
    mu, v = 2.0, 1.0
    prior = GaussianPrior(np.array([mu]), v)
    grid = time_grid(VP, 400)
    x = np.array([0.0])
    path = [x[0]]
    for k in range(400):
        x = reverse_step(DiffusionState(x, grid[k]), prior.score(x, grid[k], VP), VP, grid[k] - grid[k + 1],
                         stochastic=False).x
        path.append(x[0])
        alpha, _ = VP.rates(grid[k + 1])
        assert abs(x[0] - alpha * mu) < 0.05
    # starting below the mean, every step moves up (no oscillation)
    assert np.all(np.diff(path) > 0)
    assert abs(x[0] - mu) < 0.01


@pytest.mark.slow
def test_error_decreases_with_step_count():
    mu = np.array([1.0, -1.0])
    cov = np.diag([0.5, 2.0])
    prior = GaussianPrior(mu, cov)
    errs = []
    for steps in (32, 64, 128):
        e = []
        for seed in range(20):
            x = _integrate(prior, VP, 2000, steps, seed, 2)
            e.append(np.sum((x.mean(axis=0) - mu) ** 2) + np.sum((np.cov(x.T) - cov) ** 2))
        errs.append(np.mean(e))
    assert errs[0] > errs[1] > errs[2]


def test_chain_streams_independent_of_chain_count():
    a = ChainNoise(7, 3).normal((5,))
    b = ChainNoise(7, 6).normal((5,))
    assert np.array_equal(a, b[:3])
    c = ChainNoise(7, 3, stream=1).normal((5,))
    assert not np.allclose(a, c)


def test_time_grid_shortened():
    full = time_grid(VP, 200)
    short = time_grid(VP, 200, tau_start=0.2)
    assert full[0] == VP.T and full[-1] == VP.tau_end
    assert len(short) - 1 == 40
    assert np.allclose(np.diff(short), np.diff(full)[0])


def test_warm_start_small_tau_returns_estimate():
    x = np.array([0.5, -1.0, 2.0])
    st_ = warm_start(x, 1e-8, VP, np.random.default_rng(0))
    assert np.allclose(st_.x, x, atol=1e-3)
    assert st_.tau == 1e-8


def test_warm_start_domain_error():
    with pytest.raises(DomainError):
        warm_start(np.zeros(2), 0.0, VP, np.random.default_rng(0))


def test_warm_start_mean():
    x = np.array([1.0, -2.0])
    n = 100_000
    draws = warm_start(np.broadcast_to(x, (n, 2)).copy(), 0.3, VP, np.random.default_rng(2)).x
    alpha, sigma = VP.rates(0.3)
    assert np.all(np.abs(draws.mean(axis=0) - alpha * x) < 3 * sigma / math.sqrt(n))


def test_warm_start_at_horizon_matches_fresh_start():
    x = np.array([1.0])
    warm = warm_start(np.broadcast_to(x, (1000, 1)).copy(), VP.T, VP, np.random.default_rng(3)).x[:, 0]
    fresh = prior_sample(VP, (1000, 1), np.random.default_rng(4))[:, 0]
    assert stats.ks_2samp(warm, fresh).pvalue > 0.01


def test_warm_start_broadcasts_over_chains():
    noise = ChainNoise(0, 4)
    st_ = warm_start(np.zeros(3), 0.2, VP, noise)
    assert st_.x.shape == (4, 3)
