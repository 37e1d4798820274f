from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from diffsense.errors import DomainError, NumericalError
from diffsense.priors import (
    CountingPrior,
    Covariance,
    GaussianPrior,
    GmmPrior,
    PointMassPrior,
    SparsityPrior,
    soft_threshold,
    soft_threshold_vjp,
    tweedie_denoise,
)
from diffsense.priors.gaussian import score_gaussian, score_gmm
from diffsense.priors.sparse import score_sparse, sparse_posterior_mean
from diffsense.sde import NoiseSchedule

VP = NoiseSchedule()
VE = NoiseSchedule(kind="ve", sigma_min=0.01, sigma_max=10.0)


class _FixedRates:
    """Schedule stub returning constant ``(alpha, sigma)``."""

    def __init__(self, alpha, sigma):
        self.alpha, self.sigma = alpha, sigma

    def rates(self, tau):
        return self.alpha, self.sigma


GMM3 = GmmPrior([0.2, 0.5, 0.3], [[-2.0], [0.5], [3.0]], [0.3, 1.0, 0.5])


def _gmm2d():
    rot = np.array([[1.0, 0.4], [0.4, 0.8]])
    return GmmPrior([0.35, 0.65], [[1.0, -1.0], [-0.5, 1.5]], [rot, np.array([0.5, 1.2])])


# --- Gaussian -------------------------------------------------------------------------


def test_gaussian_hand_value():
    prior = GaussianPrior([2.0], 4.0)
    s = score_gaussian(prior, np.array([1.0]), 0.3, _FixedRates(0.8, 0.6))
    assert s[0] == pytest.approx(0.6 / 2.92, rel=1e-12)
    assert s[0] == pytest.approx(0.2055, abs=5e-5)


def test_gaussian_standard_normal_at_zero_time():
    prior = GaussianPrior(np.zeros(3), 1.0)
    x = np.array([0.3, -1.2, 2.0])
    assert np.allclose(prior.score(x, 0.0, VP), -x, atol=1e-6)


@pytest.mark.parametrize("tau", [0.05, 0.5, 1.0])
def test_gaussian_score_zero_at_mode(tau):
    prior = GaussianPrior([1.0, -2.0], np.array([[2.0, 0.3], [0.3, 1.0]]))
    alpha, _ = VP.rates(tau)
    assert np.allclose(prior.score(alpha * prior.mean, tau, VP), 0.0, atol=1e-12)


@pytest.mark.parametrize("cov_kind", ["scalar", "diag", "dense", "spectral"])
def test_covariance_forms_agree_with_dense(cov_kind):
    rng = np.random.default_rng(0)
    d = 6
    if cov_kind == "scalar":
        cov, dense = 1.7, 1.7 * np.eye(d)
    elif cov_kind == "diag":
        v = rng.uniform(0.5, 2.0, d)
        cov, dense = v, np.diag(v)
    elif cov_kind == "dense":
        m = rng.standard_normal((d, d))
        dense = m @ m.T + 0.5 * np.eye(d)
        cov = dense
    else:
        half = rng.uniform(0.5, 2.0, d // 2 + 1)
        spec = np.concatenate([half, half[1:-1][::-1]])  # S[k] == S[-k]
        cov = Covariance.spectral(spec)
        dense = cov.matrix()
    mean = rng.standard_normal(d)
    prior = GaussianPrior(mean, cov)
    x = rng.standard_normal((4, d))
    for tau in (0.1, 0.6):
        alpha, sigma = VP.rates(tau)
        C = alpha**2 * dense + sigma**2 * np.eye(d)
        ref = -np.linalg.solve(C, (x - alpha * mean).T).T
        assert np.allclose(prior.score(x, tau, VP), ref, atol=1e-10)


def test_gaussian_singular_covariance_rejected():
    # a singular covariance would make the effective covariance singular at sigma = 0
    with pytest.raises(DomainError):
        GaussianPrior([0.0, 0.0], np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(DomainError):
        GaussianPrior([0.0], 0.0)


# --- finite-difference consistency with the log-density -------------------------------


def _fd_check(prior, xs, tau, sched):
    for x in xs:
        fd = oracles.central_diff(lambda z: float(prior.log_density(z, tau, sched)), x, h=1e-5)
        s = prior.score(x, tau, sched)
        scale = max(np.linalg.norm(s), 1e-2)
        assert np.linalg.norm(fd - s) <= 1e-4 * scale, (x, fd, s)


@pytest.mark.parametrize("tau", [0.1, 0.4, 0.8])
def test_gmm_1d_fd_on_grid(tau):
    grid = np.linspace(-5, 5, 1000)[:, None]
    lp = lambda z: GMM3.log_density(z, tau, VP)  # noqa: E731
    h = 1e-5
    fd = (lp(grid + h) - lp(grid - h)) / (2 * h)
    s = GMM3.score(grid, tau, VP)[:, 0]
    assert np.all(np.abs(fd - s) <= 1e-4 * np.maximum(np.abs(s), 1e-2))


@pytest.mark.parametrize("tau", [0.1, 0.5])
def test_2d_fd_for_every_analytic_prior(tau):
    g = np.linspace(-3, 3, 9)
    xs = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2) + 0.013
    _fd_check(GaussianPrior([0.5, -0.5], np.array([[1.5, 0.4], [0.4, 0.7]])), xs, tau, VP)
    _fd_check(_gmm2d(), xs, tau, VP)
    _fd_check(SparsityPrior(0.3), xs, tau, VP)
    _fd_check(SparsityPrior(0.3), xs, tau, VE)


def test_gmm_score_matches_quadrature():
    w, m, v = [0.2, 0.5, 0.3], [-2.0, 0.5, 3.0], [0.3, 1.0, 0.5]
    xs = np.linspace(-4, 4, 17)
    for tau in (0.1, 0.3, 0.5):
        alpha, sigma = VP.rates(tau)
        _, s_ref, m_ref = oracles.gmm1d_quadrature(w, m, v, alpha, sigma, xs)
        assert np.allclose(GMM3.score(xs[:, None], tau, VP)[:, 0], s_ref, atol=1e-6)
        x0 = tweedie_denoise(GMM3.score(xs[:, None], tau, VP), xs[:, None], tau, VP)[:, 0]
        assert np.allclose(x0, m_ref, atol=1e-6)


# --- GMM structure --------------------------------------------------------------------


def test_single_component_gmm_is_gaussian():
    cov = np.array([[1.2, 0.2], [0.2, 0.6]])
    gmm = GmmPrior([1.0], [[0.3, -0.7]], [cov])
    g = GaussianPrior([0.3, -0.7], cov)
    x = np.random.default_rng(1).standard_normal((50, 2)) * 3
    for tau in (0.0, 0.2, 0.9):
        assert np.max(np.abs(gmm.score(x, tau, VP) - g.score(x, tau, VP))) < 1e-12


def test_symmetric_gmm_score_zero_at_origin():
    gmm = GmmPrior([0.5, 0.5], [[1.3, -0.4], [-1.3, 0.4]], 0.5)
    assert np.allclose(gmm.score(np.zeros(2), 0.3, VP), 0.0, atol=1e-14)


@given(st.permutations(range(3)), st.floats(-4, 4), st.floats(0.05, 1.0))
def test_gmm_permutation_invariance(perm, x, tau):
    w = np.array([0.2, 0.5, 0.3])
    m = np.array([[-2.0], [0.5], [3.0]])
    v = [0.3, 1.0, 0.5]
    permuted = GmmPrior(w[list(perm)], m[list(perm)], [v[i] for i in perm])
    xv = np.array([x])
    assert abs(permuted.score(xv, tau, VP)[0] - GMM3.score(xv, tau, VP)[0]) < 1e-10


@given(st.floats(0.05, 0.95), st.floats(-4, 4), st.floats(0.05, 1.0))
def test_gmm_duplication_invariance(split, x, tau):
    dup = GmmPrior([0.2, 0.5 * split, 0.5 * (1 - split), 0.3], [[-2.0], [0.5], [0.5], [3.0]], [0.3, 1.0, 1.0, 0.5])
    xv = np.array([x])
    assert abs(dup.score(xv, tau, VP)[0] - GMM3.score(xv, tau, VP)[0]) < 1e-10


def test_gmm_underflow_raises():
    gmm = GmmPrior([0.5, 0.5], [[-1.0], [1.0]], 0.1)
    with pytest.raises(NumericalError), np.errstate(over="ignore"):
        gmm.score(np.array([1e160]), 0.0, VP)


def test_gmm_weight_validation():
    with pytest.raises(DomainError):
        GmmPrior([0.5, 0.6], [[0.0], [1.0]], 1.0)
    with pytest.raises(DomainError):
        GmmPrior([0.5, 0.5], [[0.0], [1.0], [2.0]], 1.0)


def test_gmm_dimension_mismatch():
    with pytest.raises(DomainError):
        GMM3.score(np.zeros(2), 0.3, VP)


# --- Tweedie --------------------------------------------------------------------------


def test_tweedie_no_noise_returns_input():
    x = np.array([0.4, -2.0])
    assert np.array_equal(tweedie_denoise(np.array([5.0, 1.0]), x, 0.3, _FixedRates(1.0, 0.0)), x)


def test_tweedie_gaussian_matches_conjugate_mean():
    rng = np.random.default_rng(2)
    d = 5
    m = rng.standard_normal((d, d))
    cov = m @ m.T + 0.3 * np.eye(d)
    mean = rng.standard_normal(d)
    prior = GaussianPrior(mean, cov)
    x = rng.standard_normal((10, d))
    for tau in (0.05, 0.3, 0.7):
        alpha, sigma = VP.rates(tau)
        ref = oracles.gaussian_posterior_mean(mean, cov, alpha, sigma, x)
        assert np.max(np.abs(tweedie_denoise(prior.score(x, tau, VP), x, tau, VP) - ref)) < 1e-10


def test_tweedie_zero_alpha():
    with pytest.raises(DomainError):
        tweedie_denoise(np.zeros(2), np.zeros(2), 0.5, _FixedRates(0.0, 1.0))


@pytest.mark.parametrize(
    "prior",
    [
        GaussianPrior([0.5, -0.5, 1.0], np.array([0.5, 1.0, 2.0])),
        GmmPrior([0.3, 0.7], [[1.0, 0.0, -1.0], [-1.0, 2.0, 0.0]], [0.4, np.array([1.0, 0.5, 0.8])]),
        SparsityPrior(0.5),
        PointMassPrior(3, 0.25),
    ],
    ids=["gaussian", "gmm", "sparse", "point-mass"],
)
@pytest.mark.parametrize("sched", [VP, VE], ids=["vp", "ve"])
def test_tweedie_consistency(prior, sched):
    x = np.random.default_rng(3).standard_normal((20, 3)) * 2
    for tau in (0.1, 0.5, 0.9):
        x0 = tweedie_denoise(prior.score(x, tau, sched), x, tau, sched)
        pm = prior.posterior_mean(x, tau, sched)
        assert np.max(np.abs(x0 - pm)) < 1e-12 * max(1.0, np.max(np.abs(pm)))


def test_complex_input_is_realified():
    prior = GaussianPrior(np.zeros(4), np.array([1.0, 2.0, 0.5, 1.5]))
    z = np.array([0.3 + 1.0j, -0.5 + 0.2j])
    s = prior.score(z, 0.4, VP)
    sr = prior.score(np.array([0.3, -0.5, 1.0, 0.2]), 0.4, VP)
    assert np.allclose(s, sr[:2] + 1j * sr[2:])


def test_counting_prior():
    c = CountingPrior(GaussianPrior(np.zeros(2), 1.0))
    c.score(np.zeros((7, 2)), 0.5, VP)
    c.denoise_vjp(np.zeros(2), 0.5, VP)
    assert c.nfe == 8


# --- soft threshold and the sparse prior -----------------------------------------------


def test_soft_threshold_examples():
    assert soft_threshold(np.array([3.0]), 1.0)[0] == 2.0
    assert np.array_equal(soft_threshold(np.array([-0.5, 0.9, 1.0, -1.0]), 1.0), np.zeros(4))
    z = soft_threshold(np.array([4 * np.exp(1j * np.pi / 3)]), 1.0)[0]
    assert z == pytest.approx(3 * np.exp(1j * np.pi / 3), abs=1e-14)
    assert soft_threshold(np.array([0j]), 1.0)[0] == 0


def test_soft_threshold_negative_lambda():
    with pytest.raises(DomainError):
        soft_threshold(np.ones(2), -0.1)


def test_soft_threshold_non_expansive_pairs():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((10_000, 5)) * 2
    b = rng.standard_normal((10_000, 5)) * 2
    lhs = np.linalg.norm(soft_threshold(a, 0.7) - soft_threshold(b, 0.7), axis=1)
    assert np.all(lhs <= np.linalg.norm(a - b, axis=1) + 1e-12)
    ca = a[:, :2] + 1j * a[:, 2:4]
    cb = b[:, :2] + 1j * b[:, 2:4]
    lhs = np.linalg.norm(soft_threshold(ca, 0.7) - soft_threshold(cb, 0.7), axis=1)
    assert np.all(lhs <= np.linalg.norm(ca - cb, axis=1) + 1e-12)


@given(
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    st.floats(0.0, 5.0),
)
def test_soft_threshold_non_expansive_property(a, b, lam):
    a, b = np.array(a), np.array(b)
    assert np.linalg.norm(soft_threshold(a, lam) - soft_threshold(b, lam)) <= np.linalg.norm(a - b) + 1e-12


def test_soft_threshold_vjp_matches_fd():
    rng = np.random.default_rng(5)
    x = 2 * (rng.standard_normal(4) + 1j * rng.standard_normal(4))
    v = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    lam = 0.6
    f = lambda z: float(np.sum(np.real(np.conj(v) * soft_threshold(z, lam))))  # noqa: E731
    assert np.allclose(soft_threshold_vjp(x, lam, v), oracles.central_diff_complex(f, x), atol=1e-7)


@pytest.mark.parametrize("x_tau", [-3.0, -0.2, 0.0, 0.05, 0.7, 2.5])
@pytest.mark.parametrize("tau", [0.2, 0.6])
def test_sparse_posterior_mean_grid_oracle(x_tau, tau):
    prior = SparsityPrior(0.4)
    _, sigma = VP.rates(tau)
    lam = prior.lam(tau, VP)
    ref, dx = oracles.l1_prox_grid(x_tau, sigma**2, lam)
    got = sparse_posterior_mean(np.array([x_tau]), tau, prior, VP)[0]
    assert abs(got - ref) <= dx


def test_sparse_vanishing_lambda_and_fixed_point():
    x = np.array([0.3, -1.0, 2.0])
    prior = SparsityPrior(1.0, lambda_fn=lambda tau, a, s: 1e-300)
    assert np.allclose(prior.posterior_mean(x, 0.5, VP), x, atol=1e-250)
    assert np.array_equal(SparsityPrior(0.5).posterior_mean(np.zeros(3), 0.5, VP), np.zeros(3))


def test_sparse_dead_zone_score():
    prior = SparsityPrior(0.5)
    tau = 0.4
    _, sigma = VP.rates(tau)
    x = np.array([0.1, -0.2]) * prior.threshold(tau, VP)
    assert np.allclose(score_sparse(x, tau, prior, VP), -x / sigma**2, rtol=1e-14)


def test_sparse_large_magnitude_score():
    prior = SparsityPrior(0.05)
    for tau in (0.3, 0.7):
        x = np.array([50.0, -80.0])
        lam = prior.lam(tau, VE)
        assert np.allclose(prior.score(x, tau, VE), -lam * np.sign(x), rtol=1e-10)


def test_sparse_zero_sigma():
    with pytest.raises(DomainError):
        SparsityPrior(0.5).score(np.ones(2), 0.0, _FixedRates(1.0, 0.0))
    with pytest.raises(DomainError):
        SparsityPrior(0.0)


def test_sparse_threshold_shrinks_with_noise():
    prior = SparsityPrior(0.1)
    taus = np.linspace(0.05, 1.0, 20)
    th = [prior.threshold(t, VP) for t in taus]
    assert np.all(np.diff(th) > 0)
    for t in taus:
        _, s = VP.rates(t)
        assert prior.threshold(t, VP) == pytest.approx(prior.lam(t, VP) * s**2, rel=1e-12)


def test_score_gmm_alias():
    x = np.array([[0.3]])
    assert np.array_equal(score_gmm(GMM3, x, 0.2, VP), GMM3.score(x, 0.2, VP))


def test_point_mass_score():
    p = PointMassPrior(2, 1.0)
    alpha, sigma = VP.rates(0.5)
    x = np.array([0.0, 2.0])
    assert np.allclose(p.score(x, 0.5, VP), -(x - alpha) / sigma**2)
    assert math.isclose(float(p.posterior_mean(x, 0.5, VP)[0]), 1.0)
