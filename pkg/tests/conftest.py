import logging
import os

import hypothesis
import numpy as np
import pytest

from src.config import PolicyConfig, CriticConfig
from src.envsuite import ChainMdp, QuadraticBandit, generate_heterogeneous
from src.gaussian_models import DiagGaussian, GaussianMixture

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=100, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "fast"))

logging.getLogger("CFPI").setLevel(logging.WARNING)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def unit_gaussian():
    return DiagGaussian(np.zeros(2), np.ones(2))


@pytest.fixture
def bimodal():
    return GaussianMixture([0.3, 0.7], [[-1.0], [1.0]], [[1.0], [1.0]])


@pytest.fixture
def small_policy_settings():
    return PolicyConfig(n_components=2, hidden_width=16, hidden_layers=1, lr=1e-2, batch_size=64,
                        steps=50, log_interval=25)


@pytest.fixture
def small_critic_settings():
    return CriticConfig(n_quantiles=4, hidden_width=16, hidden_layers=1, lr=1e-2, gamma=0.9,
                        polyak_rate=0.1, batch_size=64, steps=50, ensemble_size=3, log_interval=25)


@pytest.fixture
def bandit():
    return QuadraticBandit()


@pytest.fixture
def chain():
    return ChainMdp()


@pytest.fixture
def chain_dataset(chain):
    return generate_heterogeneous(chain, chain.behavior_policies(), 10, np.random.default_rng(7), seed=7)


@pytest.fixture
def bandit_dataset(bandit):
    return generate_heterogeneous(bandit, bandit.behavior_policies(), 200, np.random.default_rng(3), seed=3)
