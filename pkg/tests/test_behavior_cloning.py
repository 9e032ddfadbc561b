import numpy as np
import pytest

from src.autodiff import Mlp, save_checkpoint
from src.behavior_cloning import (BehaviorSampler, DeterministicPolicy, PolicyHead, bc_loss, bc_train, condition,
                                  heldout_nll, load_policy, save_policy)
from src.config import PolicyConfig
from src.error import DataLoadError, DataValidationError, ShapeError
from src.gaussian_models import log_prob
from src.models import Dataset


def constant_action_dataset(rng, count=256, action=0.3):
    states = rng.uniform(-1.0, 1.0, size=(count, 2))
    actions = np.full((count, 1), action)
    return Dataset(states, actions, np.zeros(count), states, actions, np.zeros(count))


def test_fresh_policy_starts_uniform_with_unit_variance(small_policy_settings, rng):
    policy = PolicyHead(1, 2, small_policy_settings, rng)
    mixture = condition(policy, np.array([0.4]))
    np.testing.assert_allclose(mixture.weights, [0.5, 0.5])
    np.testing.assert_allclose(mixture.vars, np.ones((2, 2)))


def test_log_likelihood_matches_conditioned_mixture(small_policy_settings, rng):
    policy = PolicyHead(1, 2, small_policy_settings, rng)
    policy.network.load_flat_parameters(rng.normal(scale=0.5, size=policy.network.flat_parameters().size))
    states = rng.uniform(-1.0, 1.0, size=(6, 1))
    actions = rng.uniform(-1.0, 1.0, size=(6, 2))
    batched = policy.log_likelihood(states, actions).data
    single = [log_prob(condition(policy, s), a) for s, a in zip(states, actions)]
    np.testing.assert_allclose(batched, single, rtol=1e-9)


def test_cloning_lowers_heldout_nll(small_policy_settings, bandit_dataset, rng):
    train, heldout = bandit_dataset.split(0.8, rng)
    policy = PolicyHead(bandit_dataset.state_dim, bandit_dataset.action_dim, small_policy_settings, rng)
    before = heldout_nll(policy, heldout)
    bc_train(policy, train, 300, 64, 1e-2, rng, log_interval=25)
    assert heldout_nll(policy, heldout) < before
    assert len(policy.history) == 12
    assert policy.history[-1]["step"] == 300


def test_deterministic_policy_fits_constant_action(small_policy_settings, rng):
    dataset = constant_action_dataset(rng)
    policy = DeterministicPolicy(2, 1, small_policy_settings, rng)
    bc_train(policy, dataset, 300, 64, 1e-2, rng, log_interval=100)
    np.testing.assert_allclose(policy.act_batch(dataset.states[:5]), 0.3, atol=0.05)
    assert policy.history[-1]["bc_loss"] < policy.history[0]["bc_loss"]


def test_empty_inputs_are_rejected(small_policy_settings, rng):
    dataset = constant_action_dataset(rng)
    empty = dataset.subset(np.array([], dtype=int))
    policy = PolicyHead(2, 1, small_policy_settings, rng)
    with pytest.raises(DataValidationError):
        bc_train(policy, empty, 10, 8, 1e-2, rng)
    with pytest.raises(DataValidationError):
        bc_loss(policy, np.zeros((0, 2)), np.zeros((0, 1)))
    with pytest.raises(DataValidationError):
        heldout_nll(policy, empty)


def test_dimension_mismatch(small_policy_settings, rng):
    policy = PolicyHead(2, 1, small_policy_settings, rng)
    with pytest.raises(ShapeError):
        policy.log_likelihood(np.zeros((3, 3)), np.zeros((3, 1)))
    with pytest.raises(ShapeError):
        policy.log_likelihood(np.zeros((3, 2)), np.zeros((3, 2)))


def test_behavior_sampler(small_policy_settings, rng):
    mixture_policy = PolicyHead(2, 1, small_policy_settings, rng)
    assert BehaviorSampler(mixture_policy)(np.zeros(2), rng).shape == (1,)
    det = DeterministicPolicy(2, 1, small_policy_settings, rng)
    np.testing.assert_array_equal(BehaviorSampler(det)(np.zeros(2), rng), det.act(np.zeros(2)))


def test_policy_checkpoint_restores_likelihoods(small_policy_settings, rng, tmp_path):
    policy = PolicyHead(2, 1, small_policy_settings, rng)
    save_policy(policy, tmp_path / "behavior", {"steps": 0})
    restored = load_policy(tmp_path / "behavior")
    assert isinstance(restored, PolicyHead)
    assert restored.n_components == 2
    states, actions = rng.normal(size=(4, 2)), rng.normal(size=(4, 1))
    np.testing.assert_array_equal(restored.log_likelihood(states, actions).data,
                                  policy.log_likelihood(states, actions).data)

    det = DeterministicPolicy(2, 1, small_policy_settings, rng)
    save_policy(det, tmp_path / "det")
    assert isinstance(load_policy(tmp_path / "det"), DeterministicPolicy)


def test_checkpoint_without_policy_metadata(tmp_path):
    save_checkpoint(Mlp([2, 3], np.random.default_rng(0)), tmp_path / "bare")
    with pytest.raises(DataLoadError):
        load_policy(tmp_path / "bare")


def two_branch_dataset(rng, count=3000):
    """a = 0.5 s +/- 0.6 with equal odds and narrow noise."""
    states = rng.uniform(-1.0, 1.0, size=(count, 1))
    branch = np.where(rng.random((count, 1)) < 0.5, -0.6, 0.6)
    actions = 0.5 * states + branch + 0.05 * rng.standard_normal((count, 1))
    return Dataset(states, actions, np.zeros(count), states, actions, np.ones(count))


@pytest.mark.slow
def test_mixture_head_recovers_both_branches(rng):
    train, heldout = two_branch_dataset(rng).split(0.8, rng)
    heads = {}
    for n_components in (1, 4):
        settings = PolicyConfig(n_components=n_components, hidden_width=32, hidden_layers=2, lr=3e-3,
                                batch_size=256, steps=3000, log_interval=1000)
        heads[n_components] = bc_train(PolicyHead(1, 1, settings, rng), train, settings.steps,
                                       settings.batch_size, settings.lr, rng, settings.log_interval)
    assert heldout_nll(heads[1], heldout) - heldout_nll(heads[4], heldout) >= 0.2
    for s in (-0.5, 0.0, 0.5):
        mixture = condition(heads[4], np.array([s]))
        for mode in (0.5 * s - 0.6, 0.5 * s + 0.6):
            near = np.abs(mixture.means[:, 0] - mode) < 0.15
            assert mixture.weights[near].sum() >= 0.3
