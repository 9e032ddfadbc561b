from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from src.autodiff import Tensor
from src.critics import (CriticPair, EnsembleCritic, FunctionCritic, QuantileCritic, best_checkpoint,
                         ensemble_lcb, ensemble_train, extract_q, extraction_weights, kfold_validation_curve,
                         load_any_critic, load_critics, quantile_regression_loss, sarsa_train, save_critics,
                         save_ensemble, td_target)
from src.config import CriticConfig
from src.envsuite import ChainMdp, GaussianActionPolicy, generate_heterogeneous
from src.error import DataLoadError, DataValidationError, ShapeError


def linear_critic(offset, slope):
    return FunctionCritic(lambda s, a: offset + slope * a[:, 0],
                          lambda s, a: np.full((len(a), 1), float(slope)))


def linear_ensemble(settings, members):
    ensemble = EnsembleCritic(1, 1, replace(settings, hidden_layers=0), np.random.default_rng(0),
                              size=len(members))
    for net, (offset, slope) in zip(ensemble.members, members):
        net.load_flat_parameters([0.0, slope, offset])
    return ensemble


@given(st.integers(min_value=1, max_value=40), st.integers(min_value=1, max_value=64))
def test_extraction_weights_are_a_distribution(n_quantiles, n_fractions):
    weights = extraction_weights(n_quantiles, n_fractions)
    assert weights.shape == (n_quantiles,)
    assert np.all(weights >= 0)
    assert weights.sum() == pytest.approx(1.0, rel=1e-12)


def test_extraction_weights_on_matching_grid_are_uniform():
    np.testing.assert_allclose(extraction_weights(32, 32), np.full(32, 1 / 32), atol=1e-15)
    weights = extraction_weights(4)
    np.testing.assert_allclose(weights, weights[::-1], atol=1e-15)


def test_quantile_loss_matches_hand_computation():
    inside = quantile_regression_loss(Tensor([[0.0]]), [[0.5]], np.array([0.5]))
    assert float(inside.data) == pytest.approx(0.0625)
    outside = quantile_regression_loss(Tensor([[1.0]]), [[-2.0]], np.array([0.25]))
    assert float(outside.data) == pytest.approx(0.75 * 2.5)


def test_quantile_loss_rejects_mismatched_rows():
    with pytest.raises(ShapeError):
        quantile_regression_loss(Tensor(np.zeros((2, 3))), np.zeros((3, 1)), np.linspace(0.1, 0.9, 3))


def test_pair_takes_minimum_and_minimizer_gradient():
    pair = CriticPair(linear_critic(1.0, 2.0), linear_critic(0.0, -1.0))
    query = extract_q(pair, np.zeros((3, 1)), np.array([[0.0], [-2.0], [5.0]]))
    np.testing.assert_allclose(query.value, [0.0, -3.0, -5.0])
    np.testing.assert_allclose(query.action_gradient[:, 0], [-1.0, 2.0, -1.0])


def test_pair_tie_uses_first_critic_gradient():
    pair = CriticPair(linear_critic(0.0, 3.0), linear_critic(0.0, -4.0))
    query = pair.query(np.zeros((1, 1)), np.zeros((1, 1)))
    assert query.value[0] == 0.0
    assert query.action_gradient[0, 0] == 3.0


def test_ensemble_lower_confidence_bound(small_critic_settings):
    ensemble = linear_ensemble(small_critic_settings, [(1.0, 0.0), (2.0, 1.0), (3.0, 2.0)])
    query = ensemble_lcb(ensemble, np.zeros((1, 1)), np.zeros((1, 1)))
    assert query.value[0] == pytest.approx(2.0 - np.sqrt(2.0 / 3.0))
    assert query.action_gradient[0, 0] == pytest.approx(1.0 - np.sqrt(2.0 / 3.0))
    assert ensemble.value(np.zeros((1, 1)), np.zeros((1, 1)))[0] == pytest.approx(query.value[0])


def test_ensemble_without_spread_uses_first_member_gradient(small_critic_settings):
    ensemble = linear_ensemble(small_critic_settings, [(1.0, 0.25), (1.0, 1.0), (1.0, 2.0)])
    query = ensemble.query(np.zeros((1, 1)), np.zeros((1, 1)))
    assert query.value[0] == 1.0
    assert query.action_gradient[0, 0] == 0.25


def test_ensemble_rejects_empty(small_critic_settings):
    with pytest.raises(DataValidationError):
        EnsembleCritic(1, 1, small_critic_settings, np.random.default_rng(0), size=0)


def test_quantile_critic_gradient_matches_finite_differences(small_critic_settings, rng):
    critic = QuantileCritic(3, 2, small_critic_settings, rng)
    states = rng.normal(size=(5, 3))
    actions = rng.normal(size=(5, 2))
    query = critic.query(states, actions)
    np.testing.assert_allclose(query.value, critic.value(states, actions), atol=1e-12)
    h = 1e-6
    for column in range(2):
        bump = np.zeros(2)
        bump[column] = h
        numeric = (critic.value(states, actions + bump) - critic.value(states, actions - bump)) / (2 * h)
        np.testing.assert_allclose(query.action_gradient[:, column], numeric, atol=1e-5)


def test_quantile_critic_broadcasts_single_state(small_critic_settings, rng):
    critic = QuantileCritic(2, 1, small_critic_settings, rng)
    state = rng.normal(size=2)
    actions = rng.normal(size=(4, 1))
    np.testing.assert_allclose(critic.value(state, actions), critic.value(np.tile(state, (4, 1)), actions))
    with pytest.raises(ShapeError):
        critic.value(np.zeros((4, 2)), np.zeros((4, 3)))


def test_td_target_ignores_bootstrap_on_terminal(small_critic_settings, rng):
    pair = CriticPair.create(2, 1, small_critic_settings, rng)
    rewards = np.array([1.0, -0.5])
    target = td_target(pair, rewards, np.ones((2, 2)), np.zeros((2, 1)), np.ones(2), 0.9)
    np.testing.assert_array_equal(target, rewards)
    live = td_target(pair, rewards, np.ones((2, 2)), np.zeros((2, 1)), np.zeros(2), 0.9)
    np.testing.assert_allclose(live, rewards + 0.9 * pair.target_value(np.ones((2, 2)), np.zeros((2, 1))))


def test_sarsa_training_logs_and_counts_steps(small_critic_settings, chain_dataset, rng):
    pair = CriticPair.create(chain_dataset.state_dim, chain_dataset.action_dim, small_critic_settings, rng)
    sarsa_train(pair, chain_dataset, 30, 0.9, 0.1, 32, rng, log_interval=10)
    assert [row["step"] for row in pair.history] == [10, 20, 30]
    assert all(np.isfinite(row["loss_1"]) and np.isfinite(row["q_mean"]) for row in pair.history)
    assert pair.first.steps == pair.second.steps == 30


def test_ensemble_training_logs(small_critic_settings, chain_dataset, rng):
    ensemble = EnsembleCritic(chain_dataset.state_dim, chain_dataset.action_dim, small_critic_settings, rng)
    ensemble_train(ensemble, chain_dataset, 20, 0.9, 0.1, 32, rng, log_interval=10)
    assert [row["step"] for row in ensemble.history] == [10, 20]


def test_validation_curve_follows_checkpoints(small_critic_settings, chain_dataset, rng):
    curve = kfold_validation_curve(chain_dataset, 0.8, [20, 0, 10], rng, small_critic_settings,
                                   reference_steps=20)
    assert [step for step, _ in curve] == [0, 10, 20]
    assert all(np.isfinite(loss) and loss >= 0 for _, loss in curve)
    with pytest.raises(DataValidationError):
        kfold_validation_curve(chain_dataset, 0.8, [], rng, small_critic_settings)


def test_best_checkpoint_prefers_earliest_tie():
    assert best_checkpoint([(0, 1.0), (10, 0.5), (20, 0.5), (30, 0.7)]) == 10


def test_critic_pair_checkpoint_restores_values(small_critic_settings, rng, tmp_path):
    pair = CriticPair.create(2, 1, small_critic_settings, rng)
    pair.first.steps = pair.second.steps = 7
    save_critics(pair, tmp_path / "critic")
    restored = load_any_critic(tmp_path / "critic")
    assert isinstance(restored, CriticPair)
    states, actions = rng.normal(size=(6, 2)), rng.normal(size=(6, 1))
    np.testing.assert_array_equal(restored.value(states, actions), pair.value(states, actions))
    np.testing.assert_array_equal(restored.target_value(states, actions), pair.target_value(states, actions))
    assert restored.first.steps == 7
    assert restored.gamma == small_critic_settings.gamma


def test_ensemble_checkpoint_restores_values(small_critic_settings, rng, tmp_path):
    ensemble = EnsembleCritic(2, 1, small_critic_settings, rng)
    save_ensemble(ensemble, tmp_path / "ensemble")
    restored = load_any_critic(tmp_path / "ensemble")
    assert isinstance(restored, EnsembleCritic)
    states, actions = rng.normal(size=(4, 2)), rng.normal(size=(4, 1))
    np.testing.assert_array_equal(restored.value(states, actions), ensemble.value(states, actions))


def test_missing_manifest_is_a_load_error(tmp_path):
    with pytest.raises(DataLoadError):
        load_critics(tmp_path)
    with pytest.raises(DataLoadError):
        load_any_critic(tmp_path)


@pytest.mark.slow
@pytest.mark.parametrize("gamma", [0.5, 0.8])
def test_sarsa_recovers_deterministic_chain_values(gamma):
    chain = ChainMdp(n_states=2)
    right = GaussianActionPolicy(lambda s: np.array([1.0]), 0.0, chain.action_low, chain.action_high, "right")
    dataset = generate_heterogeneous(chain, [(right, 1.0)], 20, np.random.default_rng(3))
    settings = CriticConfig(n_quantiles=8, hidden_width=32, hidden_layers=2, lr=1e-3, gamma=gamma,
                            polyak_rate=0.05, batch_size=64)
    pair = CriticPair.create(1, 1, settings, np.random.default_rng(4))
    sarsa_train(pair, dataset, 6000, gamma, 0.05, 64, np.random.default_rng(5), log_interval=2000)
    states, actions = np.array([[0.0], [1.0]]), np.array([[1.0], [1.0]])
    exact = chain.policy_q(right, gamma, states, actions)
    np.testing.assert_allclose(exact, [-0.5 + gamma * 0.5 / (1.0 - gamma), 0.5 / (1.0 - gamma)])
    np.testing.assert_allclose(extract_q(pair, states, actions).value, exact, atol=0.02)


@pytest.mark.slow
def test_validation_curve_bottoms_out_before_overfitting():
    # ten noisy training rows: long training memorizes the reward noise
    chain = ChainMdp(reward_noise=2.0)
    steady = GaussianActionPolicy(lambda s: np.array([0.3]), 0.3, chain.action_low, chain.action_high, "steady")
    reference = chain.analytic_critic(steady, 0.5)
    settings = CriticConfig(n_quantiles=4, hidden_width=64, hidden_layers=2, lr=1e-2, gamma=0.5,
                            polyak_rate=0.1, batch_size=32, log_interval=1000)
    checkpoints = [50, 100, 200, 400, 800, 3000]
    early = 0
    for seed in range(5):
        dataset = generate_heterogeneous(chain, [(steady, 1.0)], 10, np.random.default_rng(seed))
        curve = kfold_validation_curve(dataset, 0.05, checkpoints, np.random.default_rng(100 + seed), settings,
                                       reference=reference)
        losses = [loss for _, loss in curve]
        early += best_checkpoint(curve) < checkpoints[-1] and losses[-1] > min(losses)
    assert early >= 4
