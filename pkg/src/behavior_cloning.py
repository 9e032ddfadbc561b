"""
Behavior cloning: maximum-likelihood Gaussian-Mixture policies (a single
Gaussian is the N = 1 case) and a deterministic MSE policy.
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .autodiff import Adam, Mlp, Tensor, load_checkpoint, save_checkpoint
from .config import CONFIG, PolicyConfig
from .error import DataLoadError, DataValidationError, ShapeError
from .gaussian_models import LOG_2PI, GaussianMixture, MixtureBatch, sample
from .models import Dataset

logger = logging.getLogger("CFPI")

LOGVAR_RANGE = (-20.0, 6.0)


class PolicyHead:
    """
    State-conditioned mixture: one trunk Mlp whose output is split into
    per-component means, log-variances and mixture logits.
    """
    kind = "mixture"

    def __init__(self, state_dim: int, action_dim: int, settings: PolicyConfig,
                 rng: Optional[np.random.Generator] = None):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.n_components = settings.n_components
        self.settings = settings
        n, d = self.n_components, action_dim
        widths = [state_dim] + [settings.hidden_width] * settings.hidden_layers + [2 * n * d + n]
        self.network = Mlp(widths, rng)
        if rng is not None:
            last = self.network.layers[-1]
            last.weight.data[:, n * d:] = 0.0
            last.bias.data[n * d:] = 0.0
            last.bias.data[:n * d] = rng.normal(0.0, 0.1, size=n * d)
        self.history: List[Dict] = []

    def _split(self, states) -> Tuple[Tensor, Tensor, Tensor]:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if states.shape[1] != self.state_dim:
            raise ShapeError(f"Policy expects state dimension {self.state_dim}, got {states.shape[1]}")
        out = self.network(states)
        batch = states.shape[0]
        n, d = self.n_components, self.action_dim
        means = out[:, :n * d].reshape(batch, n, d)
        log_var = out[:, n * d:2 * n * d].reshape(batch, n, d).clip(*LOGVAR_RANGE)
        logits = out[:, 2 * n * d:]
        return means, log_var, logits

    def log_likelihood(self, states, actions) -> Tensor:
        """log pi(a | s) per row, as a differentiable (B,) tensor."""
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        if actions.shape[1] != self.action_dim:
            raise ShapeError(f"Policy expects action dimension {self.action_dim}, got {actions.shape[1]}")
        means, log_var, logits = self._split(states)
        var = log_var.exp().maximum(CONFIG.var_floor)
        diff = Tensor(actions[:, None, :]) - means
        component = ((var.log() + diff.square() / var).sum(axis=-1) + self.action_dim * LOG_2PI) * -0.5
        return (logits.log_softmax(axis=-1) + component).logsumexp(axis=-1)

    def loss(self, states, actions) -> Tensor:
        return -self.log_likelihood(states, actions).mean()

    def parameters(self) -> List[Tensor]:
        return self.network.parameters()

    def batch_parameters(self, states) -> MixtureBatch:
        means, log_var, logits = self._split(states)
        log_weights = logits.data - logits.logsumexp(axis=-1, keepdims=True).data
        weights = np.exp(log_weights)
        weights /= weights.sum(axis=-1, keepdims=True)
        return MixtureBatch(weights, means.data, np.maximum(np.exp(log_var.data), CONFIG.var_floor))


class DeterministicPolicy:
    """Mlp state -> action fitted by mean squared error."""
    kind = "deterministic"

    def __init__(self, state_dim: int, action_dim: int, settings: PolicyConfig,
                 rng: Optional[np.random.Generator] = None):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.settings = settings
        widths = [state_dim] + [settings.hidden_width] * settings.hidden_layers + [action_dim]
        self.network = Mlp(widths, rng)
        self.history: List[Dict] = []

    def loss(self, states, actions) -> Tensor:
        pred = self.network(np.atleast_2d(np.asarray(states, dtype=np.float64)))
        return (pred - Tensor(np.atleast_2d(actions))).square().sum(axis=-1).mean()

    def parameters(self) -> List[Tensor]:
        return self.network.parameters()

    def act_batch(self, states) -> np.ndarray:
        return self.network(np.atleast_2d(np.asarray(states, dtype=np.float64))).data

    def act(self, state) -> np.ndarray:
        return self.act_batch(state)[0]


Policy = Union[PolicyHead, DeterministicPolicy]


def bc_loss(policy: Policy, states, actions) -> Tensor:
    """Mean negative log-likelihood (or squared error for deterministic policies) of dataset actions."""
    if np.atleast_2d(states).shape[0] == 0:
        raise DataValidationError("Empty behavior-cloning batch")
    return policy.loss(states, actions)


def bc_train(policy: Policy, dataset: Dataset, steps: int, batch_size: int, lr: float,
             rng: np.random.Generator, log_interval: int = 500) -> Policy:
    """Adam on bc_loss over uniformly sampled minibatches."""
    if len(dataset) == 0:
        raise DataValidationError("Cannot clone behavior from an empty dataset")
    optimizer = Adam(policy.parameters(), lr=lr)
    window = []
    for step in range(1, steps + 1):
        batch = dataset.sample_batch(batch_size, rng)
        optimizer.zero_grad()
        loss = bc_loss(policy, batch.states, batch.actions)
        loss.backward()
        optimizer.step()
        window.append(float(loss.data))
        if step % log_interval == 0 or step == steps:
            row = {"step": step, "bc_loss": float(np.mean(window))}
            policy.history.append(row)
            logger.info(f"BC step {step}/{steps}: loss {row['bc_loss']:.4f}")
            window = []
    return policy


def condition(policy: PolicyHead, state) -> GaussianMixture:
    """The immutable mixture pi_b(. | s)."""
    return condition_batch(policy, np.atleast_2d(state))[0]


def condition_batch(policy: PolicyHead, states) -> MixtureBatch:
    return policy.batch_parameters(states)


def heldout_nll(policy: PolicyHead, dataset: Dataset) -> float:
    """Mean -log pi(a | s) over every transition of ``dataset``."""
    if len(dataset) == 0:
        raise DataValidationError("Held-out set is empty")
    data = dataset.full_batch()
    return float(-policy.log_likelihood(data.states, data.actions).data.mean())


class BehaviorSampler:
    """Callable (state, rng) -> action drawing from the cloned behavior policy."""

    def __init__(self, policy: Policy):
        self.policy = policy

    def __call__(self, state, rng: np.random.Generator) -> np.ndarray:
        if isinstance(self.policy, DeterministicPolicy):
            return self.policy.act(state)
        return sample(condition(self.policy, state), rng)


def save_policy(policy: Policy, path, metadata: Optional[Dict] = None) -> Path:
    meta = dict(metadata or {})
    meta.update({"kind": policy.kind, "state_dim": policy.state_dim, "action_dim": policy.action_dim,
                 "n_components": getattr(policy, "n_components", 0),
                 "hidden_width": policy.settings.hidden_width,
                 "hidden_layers": policy.settings.hidden_layers})
    return save_checkpoint(policy.network, path, meta)


def load_policy(path) -> Policy:
    network, meta = load_checkpoint(path)
    try:
        kind = meta["kind"]
        settings = PolicyConfig(n_components=max(int(meta["n_components"]), 1),
                                hidden_width=int(meta["hidden_width"]),
                                hidden_layers=int(meta["hidden_layers"]))
        cls = PolicyHead if kind == "mixture" else DeterministicPolicy
        policy = cls(int(meta["state_dim"]), int(meta["action_dim"]), settings)
    except (KeyError, ValueError) as e:
        raise DataLoadError(f"Policy checkpoint {path} has incomplete metadata", cause=e) from e
    if policy.network.widths != network.widths:
        raise DataLoadError(f"Policy checkpoint widths {network.widths} do not match its metadata")
    policy.network.load_flat_parameters(network.flat_parameters())
    return policy
