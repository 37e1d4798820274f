from __future__ import annotations

import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from diffsense.priors import GmmPrior, ScoreNet, TrainingConfig, dsm_train
from diffsense.sde import NoiseSchedule

settings.register_profile(
    "diffsense", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("diffsense")

#: 1-D two-component mixture used by the score-matching checks
GMM1D = dict(weights=[0.4, 0.6], means=[-1.5, 1.5], std=0.5)
#: training protocol for the 1-D mixture network
GMM1D_TRAINING = dict(n_data=10_000, hidden=(128, 128, 128), embed_dim=64, steps=6000, batch_size=256,
                      learning_rate=3e-3, final_learning_rate=1e-5, clip_norm=10.0)
#: diffusion times (fractions of T) at which the learned score is compared
GMM1D_TAUS = (0.1, 0.3, 0.5)


def gmm1d_prior() -> GmmPrior:
    s2 = GMM1D["std"] ** 2
    return GmmPrior(GMM1D["weights"], [[m] for m in GMM1D["means"]], [s2, s2])


@pytest.fixture(scope="session")
def schedule() -> NoiseSchedule:
    return NoiseSchedule()


@pytest.fixture(scope="session")
def trained_gmm_net():
    """ScoreNet fit to draws from :func:`gmm1d_prior`; returns ``(net, prior, seconds)``."""
    sched = NoiseSchedule()
    prior = gmm1d_prior()
    p = GMM1D_TRAINING
    data = prior.sample(np.random.default_rng(0), p["n_data"])
    net = ScoreNet(1, p["hidden"], p["embed_dim"], sched, seed=0)
    cfg = TrainingConfig(steps=p["steps"], batch_size=p["batch_size"], learning_rate=p["learning_rate"],
                         final_learning_rate=p["final_learning_rate"], clip_norm=p["clip_norm"], seed=0)
    t0 = time.perf_counter()
    dsm_train(net, data, sched, cfg)
    return net, prior, time.perf_counter() - t0
