"""
Critics: fixed-fraction quantile SARSA critics combined by a double-Q minimum,
an MLP ensemble with a mean-minus-std lower bound, and the TD / validation
helpers built on them.

Every critic answers two batched queries over (states (B, ds), actions (B, da)):
``value`` -> (B,) and ``query`` -> CriticQuery with the action gradient.
"""
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import (Adam, Mlp, Tensor, load_checkpoint, polyak_update, save_checkpoint,
                       value_and_input_gradient)
from .config import CriticConfig
from .error import DataLoadError, DataValidationError, ShapeError
from .models import Batch, Dataset
from .seeding import spawn

logger = logging.getLogger("CFPI")

TIE_EPS = 1e-12


@dataclass
class CriticQuery:
    """Critic value and dQ/da, per row."""
    value: np.ndarray
    action_gradient: np.ndarray

    def __post_init__(self):
        self.value = np.atleast_1d(np.asarray(self.value, dtype=np.float64))
        self.action_gradient = np.atleast_2d(np.asarray(self.action_gradient, dtype=np.float64))
        if self.action_gradient.shape[0] != self.value.shape[0]:
            raise ShapeError("One gradient row per value is required")

    def row(self, index: int) -> Tuple[float, np.ndarray]:
        return float(self.value[index]), self.action_gradient[index]


def _as_rows(states, actions) -> Tuple[np.ndarray, np.ndarray]:
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    if states.shape[0] != actions.shape[0]:
        if states.shape[0] == 1:
            states = np.repeat(states, actions.shape[0], axis=0)
        else:
            raise ShapeError(f"{states.shape[0]} states but {actions.shape[0]} actions")
    return states, actions


class FunctionCritic:
    """Critic defined by closed-form value and action-gradient functions of (s, a) rows."""

    def __init__(self, value_fn: Callable, gradient_fn: Callable):
        self.value_fn = value_fn
        self.gradient_fn = gradient_fn

    def value(self, states, actions) -> np.ndarray:
        states, actions = _as_rows(states, actions)
        return np.asarray(self.value_fn(states, actions), dtype=np.float64).reshape(-1)

    def query(self, states, actions) -> CriticQuery:
        states, actions = _as_rows(states, actions)
        return CriticQuery(self.value(states, actions), self.gradient_fn(states, actions))


def extraction_weights(n_quantiles: int, n_fractions: int = 32) -> np.ndarray:
    """
    Weights c with Q = z @ c: the mean over n_fractions midpoints of the
    quantile curve, linearly interpolated between head midpoints and held
    constant beyond the outermost heads.
    """
    heads = (np.arange(n_quantiles) + 0.5) / n_quantiles
    grid = (np.arange(n_fractions) + 0.5) / n_fractions
    basis = np.eye(n_quantiles)
    return np.array([np.interp(grid, heads, basis[j]) for j in range(n_quantiles)]).mean(axis=1)


class QuantileCritic:
    """
    Mlp (state ++ action) -> N_q quantile values at fixed midpoint fractions,
    with a Polyak-averaged target copy.
    """

    def __init__(self, state_dim: int, action_dim: int, settings: CriticConfig,
                 rng: Optional[np.random.Generator] = None):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.settings = settings
        widths = [state_dim + action_dim] + [settings.hidden_width] * settings.hidden_layers + [settings.n_quantiles]
        self.network = Mlp(widths, rng)
        self.target = self.network.copy()
        self.fractions = np.linspace(0.0, 1.0, settings.n_quantiles + 1)
        self.midpoints = 0.5 * (self.fractions[:-1] + self.fractions[1:])
        self.weights = extraction_weights(settings.n_quantiles, settings.extraction_fractions)
        self.optimizer = Adam(self.network.parameters(), lr=settings.lr)
        self.steps = 0

    def _inputs(self, states, actions) -> np.ndarray:
        states, actions = _as_rows(states, actions)
        if states.shape[1] != self.state_dim or actions.shape[1] != self.action_dim:
            raise ShapeError(
                f"Critic expects ({self.state_dim}, {self.action_dim}) inputs, got "
                f"({states.shape[1]}, {actions.shape[1]})"
            )
        return np.concatenate([states, actions], axis=1)

    def _scalar_head(self, network: Mlp) -> Callable[[Tensor], Tensor]:
        weights = self.weights.reshape(-1, 1)
        return lambda x: network(x) @ weights

    def quantiles(self, states, actions, target: bool = False) -> np.ndarray:
        network = self.target if target else self.network
        return network(self._inputs(states, actions)).data

    def value(self, states, actions, target: bool = False) -> np.ndarray:
        return self.quantiles(states, actions, target) @ self.weights

    def query(self, states, actions) -> CriticQuery:
        values, grad = value_and_input_gradient(self._scalar_head(self.network),
                                                self._inputs(states, actions))
        return CriticQuery(values, grad[:, self.state_dim:])

    def update_target(self) -> None:
        polyak_update(self.target, self.network, self.settings.polyak_rate)

    def regress(self, batch: Batch, targets: np.ndarray, target_weights: Optional[np.ndarray] = None) -> float:
        """One Adam step on the quantile regression loss against fixed targets."""
        self.optimizer.zero_grad()
        pred = self.network(self._inputs(batch.states, batch.actions))
        loss = quantile_regression_loss(pred, targets, self.midpoints, target_weights)
        loss.backward()
        self.optimizer.step()
        self.steps += 1
        return float(loss.data)


def quantile_regression_loss(pred: Tensor, targets: np.ndarray, midpoints: np.ndarray,
                             target_weights: Optional[np.ndarray] = None) -> Tensor:
    """
    Mean over the batch of sum_ij w_i |rho_j - 1{d_ij < 0}| huber(d_ij), with
    d_ij = target_i - pred_j. ``targets`` is (B, N_t); ``w`` defaults to 1 / N_t.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    batch, n_pred = pred.shape
    if targets.shape[0] != batch:
        raise ShapeError(f"Target rows {targets.shape[0]} differ from prediction rows {batch}")
    n_targets = targets.shape[1]
    if target_weights is None:
        target_weights = np.full(n_targets, 1.0 / n_targets)
    delta = Tensor(targets[:, :, None]) - pred.reshape(batch, 1, n_pred)
    asymmetry = np.abs(midpoints[None, None, :] - (delta.data < 0))
    weight = asymmetry * np.asarray(target_weights)[None, :, None]
    return (delta.huber() * weight).sum() * (1.0 / batch)


def quantile_loss(critic: QuantileCritic, batch: Batch, gamma: float) -> Tensor:
    """
    Huber quantile SARSA loss with bootstrapped target quantiles
    r + gamma (1 - done) Z_target(s', a'); the target side carries no gradient.
    """
    if len(batch) == 0:
        raise DataValidationError("Empty batch")
    bootstrap = critic.quantiles(batch.next_states, batch.next_actions, target=True)
    targets = batch.rewards[:, None] + gamma * (1.0 - batch.dones)[:, None] * bootstrap
    pred = critic.network(critic._inputs(batch.states, batch.actions))
    return quantile_regression_loss(pred, targets, critic.midpoints)


@dataclass
class CriticPair:
    """Two independently initialized quantile critics combined by their minimum."""
    first: QuantileCritic
    second: QuantileCritic
    history: List[Dict] = field(default_factory=list)
    gamma: float = 0.99

    @classmethod
    def create(cls, state_dim: int, action_dim: int, settings: CriticConfig,
               rng: np.random.Generator) -> "CriticPair":
        rng_a, rng_b = spawn(rng, 2)
        return cls(QuantileCritic(state_dim, action_dim, settings, rng_a),
                   QuantileCritic(state_dim, action_dim, settings, rng_b),
                   gamma=settings.gamma)

    @property
    def members(self) -> Tuple[QuantileCritic, QuantileCritic]:
        return self.first, self.second

    @property
    def state_dim(self) -> int:
        return self.first.state_dim

    @property
    def action_dim(self) -> int:
        return self.first.action_dim

    def value(self, states, actions) -> np.ndarray:
        return np.minimum(self.first.value(states, actions), self.second.value(states, actions))

    def target_value(self, states, actions) -> np.ndarray:
        return np.minimum(self.first.value(states, actions, target=True),
                          self.second.value(states, actions, target=True))

    def query(self, states, actions) -> CriticQuery:
        """Min of the two critics; the gradient comes from the minimizer, critic 1 on ties."""
        q1 = self.first.query(states, actions)
        q2 = self.second.query(states, actions)
        use_second = q2.value < q1.value
        return CriticQuery(np.where(use_second, q2.value, q1.value),
                           np.where(use_second[:, None], q2.action_gradient, q1.action_gradient))


def extract_q(critics: CriticPair, states, actions) -> CriticQuery:
    """Double-Q extraction: min over critics of the 32-midpoint quantile mean, with dQ/da."""
    return critics.query(states, actions)


def td_target(critics: CriticPair, rewards, next_states, next_actions, dones, gamma: float) -> np.ndarray:
    """r + gamma (1 - d) min_k Q_target,k(s', a')."""
    rewards = np.atleast_1d(np.asarray(rewards, dtype=np.float64))
    dones = np.atleast_1d(np.asarray(dones, dtype=np.float64))
    live = dones == 0
    bootstrap = np.zeros_like(rewards)
    if gamma != 0 and np.any(live):
        next_states = np.atleast_2d(next_states)
        next_actions = np.atleast_2d(next_actions)
        bootstrap[live] = critics.target_value(next_states[live], next_actions[live])
    return rewards + gamma * (1.0 - dones) * bootstrap


def sarsa_train(critics: CriticPair, dataset: Dataset, steps: int, gamma: float, polyak_rate: float,
                batch_size: int, rng: np.random.Generator, log_interval: int = 500) -> CriticPair:
    """
    Warm-start both critics on the dataset's own (s, a, r, s', a') tuples.
    Targets are Polyak-averaged after every step.
    """
    dataset.require_next_actions()
    critics.gamma = gamma
    for member in critics.members:
        member.settings = _with_polyak(member.settings, polyak_rate)
    for step in range(1, steps + 1):
        batch = dataset.sample_batch(batch_size, rng)
        losses = []
        for member in critics.members:
            member.optimizer.zero_grad()
            loss = quantile_loss(member, batch, gamma)
            loss.backward()
            member.optimizer.step()
            member.steps += 1
            member.update_target()
            losses.append(float(loss.data))
        if step % log_interval == 0 or step == steps:
            q = critics.value(batch.states, batch.actions)
            row = {"step": step, "loss_1": losses[0], "loss_2": losses[1],
                   "q_mean": float(q.mean()), "q_max": float(q.max())}
            critics.history.append(row)
            logger.info(f"SARSA step {step}/{steps}: losses {losses[0]:.4f}, {losses[1]:.4f}, "
                        f"mean Q {row['q_mean']:.4f}")
    return critics


def _with_polyak(settings: CriticConfig, rate: float) -> CriticConfig:
    return settings if settings.polyak_rate == rate else replace(settings, polyak_rate=rate)


class EnsembleCritic:
    """M scalar MLP Q networks; queried through the mean minus population std."""

    def __init__(self, state_dim: int, action_dim: int, settings: CriticConfig,
                 rng: np.random.Generator, size: Optional[int] = None):
        size = settings.ensemble_size if size is None else size
        if size < 1:
            raise DataValidationError(f"Ensemble needs at least one member, got {size}")
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.settings = settings
        widths = [state_dim + action_dim] + [settings.hidden_width] * settings.hidden_layers + [1]
        self.members = [Mlp(widths, member_rng) for member_rng in spawn(rng, size)]
        self.targets = [m.copy() for m in self.members]
        self.optimizers = [Adam(m.parameters(), lr=settings.lr) for m in self.members]
        self.history: List[Dict] = []

    def __len__(self) -> int:
        return len(self.members)

    def _inputs(self, states, actions) -> np.ndarray:
        states, actions = _as_rows(states, actions)
        return np.concatenate([states, actions], axis=1)

    def member_values(self, states, actions, target: bool = False) -> np.ndarray:
        """(M, B) per-member values."""
        x = self._inputs(states, actions)
        nets = self.targets if target else self.members
        return np.stack([net(x).data[:, 0] for net in nets])

    def value(self, states, actions) -> np.ndarray:
        values = self.member_values(states, actions)
        return values.mean(axis=0) - values.std(axis=0)

    def query(self, states, actions) -> CriticQuery:
        x = self._inputs(states, actions)
        pairs = [value_and_input_gradient(net, x) for net in self.members]
        values = np.stack([v for v, _ in pairs])
        grads = np.stack([g[:, self.state_dim:] for _, g in pairs])
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        spread = values - mean
        safe_std = np.where(std > TIE_EPS, std, 1.0)
        std_grad = np.einsum("mb,mbd->bd", spread, grads) / (len(self) * safe_std[:, None])
        grad = grads.mean(axis=0) - std_grad
        grad = np.where((std > TIE_EPS)[:, None], grad, grads[0])
        return CriticQuery(mean - std, grad)


def ensemble_lcb(ensemble: EnsembleCritic, states, actions) -> CriticQuery:
    """mean_k Q_k - sqrt(mean_k (Q_k - mean)^2) and its action gradient."""
    return ensemble.query(states, actions)


def ensemble_train(ensemble: EnsembleCritic, dataset: Dataset, steps: int, gamma: float,
                   polyak_rate: float, batch_size: int, rng: np.random.Generator,
                   log_interval: int = 500) -> EnsembleCritic:
    """SARSA regression of every member to r + gamma (1 - d) Q_target,k(s', a')."""
    dataset.require_next_actions()
    for step in range(1, steps + 1):
        batch = dataset.sample_batch(batch_size, rng)
        x = ensemble._inputs(batch.states, batch.actions)
        x_next = ensemble._inputs(batch.next_states, batch.next_actions)
        losses = []
        for net, target, optimizer in zip(ensemble.members, ensemble.targets, ensemble.optimizers):
            y = batch.rewards + gamma * (1.0 - batch.dones) * target(x_next).data[:, 0]
            optimizer.zero_grad()
            loss = (net(x) - Tensor(y[:, None])).square().mean()
            loss.backward()
            optimizer.step()
            polyak_update(target, net, polyak_rate)
            losses.append(float(loss.data))
        if step % log_interval == 0 or step == steps:
            row = {"step": step, "loss_mean": float(np.mean(losses)), "loss_max": float(np.max(losses))}
            ensemble.history.append(row)
            logger.info(f"Ensemble step {step}/{steps}: mean loss {row['loss_mean']:.4f}")
    return ensemble


def kfold_validation_curve(dataset: Dataset, split_ratio: float, checkpoints: Sequence[int],
                           rng: np.random.Generator, settings: CriticConfig,
                           reference: Optional[CriticPair] = None,
                           reference_steps: Optional[int] = None) -> List[Tuple[int, float]]:
    """
    Train a fresh critic pair on a random train split and record, at each
    checkpoint, the mean squared gap to a reference critic on the validation
    split. Without a reference one is trained on the full dataset.
    """
    if len(checkpoints) == 0:
        raise DataValidationError("At least one checkpoint step is required")
    checkpoints = sorted(int(c) for c in checkpoints)
    if checkpoints[0] < 0:
        raise DataValidationError("Checkpoint steps cannot be negative")
    init_rng, split_rng, train_rng, reference_rng = spawn(rng, 4)
    train, validation = dataset.split(split_ratio, split_rng)
    if reference is None:
        reference = CriticPair.create(dataset.state_dim, dataset.action_dim, settings, reference_rng)
        sarsa_train(reference, dataset, reference_steps or settings.steps, settings.gamma,
                    settings.polyak_rate, settings.batch_size, reference_rng, settings.log_interval)
    held_out = validation.full_batch()
    expected = reference.value(held_out.states, held_out.actions)
    critic = CriticPair.create(dataset.state_dim, dataset.action_dim, settings, init_rng)
    curve = []
    done = 0
    for checkpoint in checkpoints:
        if checkpoint > done:
            sarsa_train(critic, train, checkpoint - done, settings.gamma, settings.polyak_rate,
                        settings.batch_size, train_rng, settings.log_interval)
            done = checkpoint
        gap = critic.value(held_out.states, held_out.actions) - expected
        curve.append((checkpoint, float(np.mean(gap * gap))))
        logger.debug(f"Validation loss at step {checkpoint}: {curve[-1][1]:.6f}")
    return curve


def best_checkpoint(curve: Sequence[Tuple[int, float]]) -> int:
    """Step count with the lowest validation loss; earliest wins ties."""
    return min(curve, key=lambda item: (item[1], item[0]))[0]


def save_critics(critics: CriticPair, directory, metadata: Optional[Dict] = None) -> Path:
    """
    Write both online and target networks plus a manifest recording the
    fraction grid, discount and training steps.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for index, member in enumerate(critics.members, start=1):
        save_checkpoint(member.network, directory / f"critic_{index}", {"steps": member.steps})
        save_checkpoint(member.target, directory / f"critic_{index}_target", {"steps": member.steps})
    settings = critics.first.settings
    manifest = dict(metadata or {})
    manifest.update({
        "kind": "quantile_pair",
        "state_dim": critics.state_dim,
        "action_dim": critics.action_dim,
        "fractions": critics.first.fractions.tolist(),
        "extraction_fractions": settings.extraction_fractions,
        "gamma": critics.gamma,
        "steps": critics.first.steps,
        "settings": asdict(settings),
    })
    path = directory / "critic_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_critics(directory) -> CriticPair:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "critic_manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataLoadError(f"Cannot read critic manifest in {directory}", cause=e) from e
    settings = CriticConfig(**manifest["settings"])
    members = []
    for index in (1, 2):
        critic = QuantileCritic(manifest["state_dim"], manifest["action_dim"], settings)
        network, meta = load_checkpoint(directory / f"critic_{index}")
        target, _ = load_checkpoint(directory / f"critic_{index}_target")
        if network.widths != critic.network.widths:
            raise DataLoadError(f"Critic {index} checkpoint widths {network.widths} do not match the manifest")
        critic.network.load_flat_parameters(network.flat_parameters())
        critic.target.load_flat_parameters(target.flat_parameters())
        critic.steps = int(meta.get("steps", 0))
        members.append(critic)
    return CriticPair(members[0], members[1], gamma=float(manifest["gamma"]))


def save_ensemble(ensemble: EnsembleCritic, directory, metadata: Optional[Dict] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for index, net in enumerate(ensemble.members, start=1):
        save_checkpoint(net, directory / f"member_{index}")
    manifest = dict(metadata or {})
    manifest.update({"kind": "ensemble", "state_dim": ensemble.state_dim, "action_dim": ensemble.action_dim,
                     "size": len(ensemble), "settings": asdict(ensemble.settings)})
    path = directory / "critic_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_ensemble(directory) -> EnsembleCritic:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "critic_manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataLoadError(f"Cannot read critic manifest in {directory}", cause=e) from e
    settings = CriticConfig(**manifest["settings"])
    ensemble = EnsembleCritic(manifest["state_dim"], manifest["action_dim"], settings,
                              np.random.default_rng(0), size=manifest["size"])
    for index, net in enumerate(ensemble.members, start=1):
        loaded, _ = load_checkpoint(directory / f"member_{index}")
        net.load_flat_parameters(loaded.flat_parameters())
    ensemble.targets = [net.copy() for net in ensemble.members]
    return ensemble


def load_any_critic(directory):
    """Quantile pair or ensemble, whichever the manifest in ``directory`` describes."""
    path = Path(directory) / "critic_manifest.json"
    try:
        kind = json.loads(path.read_text()).get("kind")
    except (OSError, json.JSONDecodeError) as e:
        raise DataLoadError(f"Cannot read critic manifest {path}", cause=e) from e
    return load_ensemble(directory) if kind == "ensemble" else load_critics(directory)
