"""
Offline RL algorithms built from the closed-form operators: the one-step
method, multi-step policy iteration, and the iterative actor-free algorithm
with target networks and policy smoothing.
"""
import copy
import logging
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .behavior_cloning import (DeterministicPolicy, PolicyHead, bc_train, condition,
                               condition_batch, load_policy, save_policy)
from .cfpi_ops import (ActionGradient, behavior_mean, easy_bcq, improve_det, improve_det_stochastic,
                       improve_mg, improve_mg_batch, improve_with_critic, mode_select)
from .config import CONFIG, OPERATORS, CriticConfig, IterativeConfig, MultiStepConfig, OneStepConfig
from .critics import (CriticPair, EnsembleCritic, ensemble_train, load_any_critic, sarsa_train,
                      save_critics, save_ensemble, td_target)
from .data import RunDirectory, dataset_hash, dump_json, load_json
from .envsuite import Env, rollout
from .error import ConfigurationError, DataLoadError, DivergenceError
from .models import Dataset
from .seeding import spawn

logger = logging.getLogger("CFPI")

DEFAULT_LOG_TAUS = (0.0, 0.5, 1.0, 1.5, 2.0)
DEFAULT_N_BCQ = (2, 5, 10, 20, 50, 100)
ACT_CHUNK = 1024
# smallest reward scale the divergence bound is built on
REWARD_SCALE_FLOOR = 1.0


class ImprovedPolicy:
    """
    A behavior model, a critic and one operator with its trust region.
    ``act`` is deterministic: sampling operators draw from a generator seeded
    by (seed, state bytes).
    """

    def __init__(self, behavior, critic, operator: str = "mg", log_tau: float = 0.5,
                 xi: float = 0.05, n_bcq: int = 5, det_delta: float = 0.05, det_samples: int = 10,
                 action_low: Sequence[float] = (-1.0,), action_high: Sequence[float] = (1.0,),
                 seed: int = 0, mode_select_at_zero: bool = True):
        if operator not in OPERATORS:
            raise ConfigurationError(f"Unknown operator {operator!r}")
        if log_tau < 0:
            raise ConfigurationError(f"log_tau must be >= 0, got {log_tau}")
        if isinstance(behavior, DeterministicPolicy) and operator not in ("det", "bc"):
            raise ConfigurationError(f"Operator {operator!r} needs a stochastic behavior model")
        self.behavior = behavior
        self.critic = critic
        self.operator = operator
        self.log_tau = float(log_tau)
        self.xi = float(xi)
        self.n_bcq = int(n_bcq)
        self.det_delta = float(det_delta)
        self.det_samples = int(det_samples)
        self.action_low = np.asarray(action_low, dtype=np.float64)
        self.action_high = np.asarray(action_high, dtype=np.float64)
        self.seed = int(seed)
        self.mode_select_at_zero = mode_select_at_zero

    def settings(self) -> Dict:
        return {"operator": self.operator, "log_tau": self.log_tau, "xi": self.xi, "n_bcq": self.n_bcq,
                "det_delta": self.det_delta, "det_samples": self.det_samples,
                "action_low": self.action_low.tolist(), "action_high": self.action_high.tolist(),
                "seed": self.seed, "mode_select_at_zero": self.mode_select_at_zero}

    def replace(self, **changes) -> "ImprovedPolicy":
        values = self.settings()
        values.update(changes)
        return ImprovedPolicy(self.behavior, self.critic, **values)

    def behavior_model(self, state):
        if isinstance(self.behavior, PolicyHead):
            return condition(self.behavior, state)
        return self.behavior(state)

    def _state_rng(self, state) -> np.random.Generator:
        key = zlib.crc32(np.ascontiguousarray(state, dtype=np.float64).tobytes())
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(key,)))

    def raw_action(self, state) -> np.ndarray:
        """Operator output before clipping."""
        state = np.atleast_1d(np.asarray(state, dtype=np.float64))
        op = self.operator
        if isinstance(self.behavior, DeterministicPolicy):
            anchor = self.behavior.act(state)
            if op == "bc":
                return anchor
            query = self.critic.query(state[None, :], anchor[None, :])
            return improve_det(anchor, ActionGradient(query.action_gradient[0], anchor), self.det_delta)
        model = self.behavior_model(state)
        if op == "bc":
            return behavior_mean(model)
        if op in ("sg", "lse", "jensen"):
            return improve_with_critic(op, model, self.critic, state, self.log_tau)
        if op == "mg":
            if self.log_tau == 0 and self.mode_select_at_zero:
                return mode_select(model, self.critic, state, self.xi)
            return improve_mg(model, self.critic, state, self.log_tau)
        if op == "mode_select":
            return mode_select(model, self.critic, state, self.xi)
        if op == "ebcq":
            return easy_bcq(model, self.critic, state, self.n_bcq, self._state_rng(state))
        return improve_det_stochastic(model, self.critic, state, self.det_delta, self.det_samples,
                                      self._state_rng(state))

    def act(self, state) -> np.ndarray:
        return np.clip(self.raw_action(state), self.action_low, self.action_high)

    def act_batch(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if self.operator == "mg" and isinstance(self.behavior, PolicyHead) \
                and not (self.log_tau == 0 and self.mode_select_at_zero):
            out = [improve_mg_batch(condition_batch(self.behavior, chunk), self.critic, chunk, self.log_tau)
                   for chunk in np.array_split(states, max(1, -(-len(states) // ACT_CHUNK)))]
            raw = np.concatenate(out) if out else np.zeros((0, len(self.action_low)))
        else:
            raw = np.stack([self.raw_action(s) for s in states])
        return np.clip(raw, self.action_low, self.action_high)

    def __call__(self, state, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        return self.act(state)


@dataclass
class OneStepResult:
    policy: ImprovedPolicy
    behavior: Union[PolicyHead, DeterministicPolicy]
    critic: Union[CriticPair, EnsembleCritic]
    log: List[Dict] = field(default_factory=list)


def _bounds(config, dataset: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    low = np.asarray(config.action_low, dtype=np.float64)
    high = np.asarray(config.action_high, dtype=np.float64)
    if low.size == 1 and dataset.action_dim > 1:
        low = np.full(dataset.action_dim, low[0])
        high = np.full(dataset.action_dim, high[0])
    if low.size != dataset.action_dim:
        raise ConfigurationError(f"Action bounds have {low.size} entries for action dimension {dataset.action_dim}")
    return low, high


def fit_behavior(dataset: Dataset, config: OneStepConfig, rng: np.random.Generator):
    """Deterministic policy for I_DET, one Gaussian for sg, the configured mixture otherwise."""
    init_rng, train_rng = spawn(rng, 2)
    settings = config.policy_settings()
    if config.operator == "det":
        behavior = DeterministicPolicy(dataset.state_dim, dataset.action_dim, settings, init_rng)
    else:
        if config.operator == "sg" and settings.n_components != 1:
            settings = replace(settings, n_components=1)
        behavior = PolicyHead(dataset.state_dim, dataset.action_dim, settings, init_rng)
    logger.info(f"Behavior cloning: {behavior.kind}, {settings.steps} steps")
    return bc_train(behavior, dataset, settings.steps, settings.batch_size, settings.lr, train_rng,
                    settings.log_interval)


def fit_critic(dataset: Dataset, config: OneStepConfig, rng: np.random.Generator):
    init_rng, train_rng = spawn(rng, 2)
    settings = config.critic_settings()
    if config.critic == "ensemble":
        critic = EnsembleCritic(dataset.state_dim, dataset.action_dim, settings, init_rng)
        return ensemble_train(critic, dataset, settings.steps, settings.gamma, settings.polyak_rate,
                              settings.batch_size, train_rng, settings.log_interval)
    critic = CriticPair.create(dataset.state_dim, dataset.action_dim, settings, init_rng)
    return sarsa_train(critic, dataset, settings.steps, settings.gamma, settings.polyak_rate,
                       settings.batch_size, train_rng, settings.log_interval)


def one_step(dataset: Dataset, config: OneStepConfig, rng: np.random.Generator,
             run_dir: Optional[RunDirectory] = None, behavior=None, critic=None) -> OneStepResult:
    """
    Fit the behavior policy and a SARSA critic once, then wrap the operator.
    A pre-trained ``behavior`` or ``critic`` is used as is.
    """
    behavior_rng, critic_rng = spawn(rng, 2)
    if behavior is None:
        behavior = fit_behavior(dataset, config, behavior_rng)
    if critic is None:
        critic = fit_critic(dataset, config, critic_rng)
    low, high = _bounds(config, dataset)
    policy = ImprovedPolicy(behavior, critic, config.operator, config.log_tau, config.xi, config.n_bcq,
                            config.det_delta, config.det_samples, low, high, config.seed,
                            config.mode_select_at_zero)
    log = [dict(row, phase="bc") for row in behavior.history] + [dict(row, phase="critic") for row in critic.history]
    if run_dir is not None:
        save_policy_artifacts(policy, run_dir, {"dataset_hash": dataset_hash(dataset)})
    return OneStepResult(policy, behavior, critic, log)


def save_policy_artifacts(policy: ImprovedPolicy, run_dir: RunDirectory, metadata: Optional[Dict] = None) -> None:
    """checkpoints/behavior.{bin,json}, checkpoints/critic/ and checkpoints/policy.json."""
    metadata = dict(metadata or {})
    save_policy(policy.behavior, run_dir.checkpoints / "behavior", metadata)
    if isinstance(policy.critic, EnsembleCritic):
        save_ensemble(policy.critic, run_dir.checkpoints / "critic", metadata)
    else:
        save_critics(policy.critic, run_dir.checkpoints / "critic", metadata)
    dump_json(policy.settings(), run_dir.checkpoints / "policy.json")


def load_improved_policy(run_dir, **overrides) -> ImprovedPolicy:
    """Rebuild the ImprovedPolicy saved by ``one_step`` / ``iterate`` in ``run_dir``."""
    root = Path(run_dir.root if isinstance(run_dir, RunDirectory) else run_dir)
    checkpoints = root / "checkpoints"
    if not (checkpoints / "policy.json").exists():
        raise DataLoadError(f"No improved policy saved under {root}")
    settings = load_json(checkpoints / "policy.json")
    settings.update(overrides)
    behavior = load_policy(checkpoints / "behavior")
    critic = load_any_critic(checkpoints / "critic")
    return ImprovedPolicy(behavior, critic, **settings)


def _max_abs_reward(dataset: Dataset) -> float:
    return float(np.max(np.abs(dataset.rewards))) if len(dataset) else 0.0


def _check_divergence(values: np.ndarray, bound: float, step: int) -> None:
    worst = float(np.max(np.abs(values)))
    if not np.isfinite(worst) or worst > bound:
        raise DivergenceError(f"Critic values reached {worst:.4g} at step {step}, bound is {bound:.4g}")


def iterate(dataset: Dataset, config: IterativeConfig, rng: np.random.Generator,
            behavior: PolicyHead, critics: Optional[CriticPair] = None) -> Tuple[ImprovedPolicy, List[Dict]]:
    """
    Iterative I_MG: TD targets r + gamma (1 - d) min_k Q_target,k(s', a') with
    a' = clip(I_MG(pi_b, min online critics)(s') + clip(eps, -c, c), low, high);
    both critics regress to the scalar targets, then targets are Polyak-averaged.
    The behavior policy stays frozen.
    """
    low, high = _bounds(config, dataset)
    init_rng, batch_rng, noise_rng = spawn(rng, 3)
    if critics is None:
        settings = CriticConfig(n_quantiles=config.n_quantiles, hidden_width=config.hidden_width,
                                hidden_layers=config.hidden_layers, lr=config.critic_lr, gamma=config.gamma,
                                polyak_rate=config.polyak_rate, batch_size=config.batch_size)
        critics = CriticPair.create(dataset.state_dim, dataset.action_dim, settings, init_rng)
    for member in critics.members:
        member.settings = replace(member.settings, polyak_rate=config.polyak_rate)
    reward_scale = max(_max_abs_reward(dataset), REWARD_SCALE_FLOOR)
    bound = reward_scale / (1.0 - config.gamma) * (1.0 + config.divergence_tolerance)
    rows: List[Dict] = []
    for step in range(1, config.total_steps + 1):
        batch = dataset.sample_batch(config.batch_size, batch_rng)
        mixtures = condition_batch(behavior, batch.next_states)
        improved = improve_mg_batch(mixtures, critics, batch.next_states, config.log_tau)
        noise = np.clip(config.smoothing_sigma * noise_rng.standard_normal(improved.shape),
                        -config.smoothing_clip, config.smoothing_clip)
        next_actions = np.clip(improved + noise, low, high)
        targets = td_target(critics, batch.rewards, batch.next_states, next_actions, batch.dones, config.gamma)
        losses = []
        for member in critics.members:
            losses.append(member.regress(batch, targets[:, None]))
            member.update_target()
        if step % config.log_interval == 0 or step == config.total_steps:
            q = critics.value(batch.states, batch.actions)
            _check_divergence(q, bound, step)
            row = {"step": step, "loss_1": losses[0], "loss_2": losses[1], "q_mean": float(q.mean()),
                   "q_max": float(q.max()), "target_mean": float(targets.mean())}
            rows.append(row)
            logger.info(f"Iterate step {step}/{config.total_steps}: losses {losses[0]:.4f}, {losses[1]:.4f}, "
                        f"mean Q {row['q_mean']:.4f}")
    policy = ImprovedPolicy(behavior, critics, "mg", config.log_tau, action_low=low, action_high=high,
                            seed=config.seed, mode_select_at_zero=False)
    return policy, rows


def _with_next_actions(dataset: Dataset, next_actions: np.ndarray) -> Dataset:
    return Dataset(dataset.states, dataset.actions, dataset.rewards, dataset.next_states,
                   next_actions, dataset.dones, metadata=dict(dataset.metadata))


def multi_step(dataset: Dataset, config: MultiStepConfig, rounds: int, rng: np.random.Generator,
               start: OneStepResult) -> ImprovedPolicy:
    """
    Alternate policy evaluation of the current improved policy (SARSA with
    a' = pi_t(s'), a fixed budget of ``eval_steps``) with operator application.
    Rounds train a copy of the critic pair, so ``start`` keeps its one-step
    policy; ``rounds`` = 0 returns that policy itself.
    """
    if rounds < 0:
        raise ConfigurationError(f"rounds must be >= 0, got {rounds}")
    if rounds == 0:
        return start.policy
    if not isinstance(start.critic, CriticPair):
        raise ConfigurationError("Multi-step evaluation needs the quantile critic pair")
    critic = copy.deepcopy(start.critic)
    policy = ImprovedPolicy(start.policy.behavior, critic, **start.policy.settings())
    for round_rng, t in zip(spawn(rng, rounds), range(1, rounds + 1)):
        next_actions = policy.act_batch(dataset.next_states)
        sarsa_train(critic, _with_next_actions(dataset, next_actions), config.eval_steps, config.gamma,
                    config.polyak_rate, config.batch_size, round_rng)
        logger.info(f"Multi-step round {t}/{rounds} evaluated with {config.eval_steps} steps")
    return policy


@dataclass
class SafetyReport:
    j_improved: float
    j_behavior: float
    margin: float
    passed: bool


def safe_improvement_check(policy, behavior_policy, env: Env, episodes: int, rng: np.random.Generator,
                           margin_fraction: Optional[float] = None) -> SafetyReport:
    """Monte-Carlo J of both policies; passes when J_improved >= J_behavior - margin."""
    margin_fraction = CONFIG.safe_margin_fraction if margin_fraction is None else margin_fraction
    improved_rng, behavior_rng = spawn(rng, 2)
    j_improved = rollout(env, policy, episodes, improved_rng).mean_return
    j_behavior = rollout(env, behavior_policy, episodes, behavior_rng).mean_return
    margin = margin_fraction * abs(j_behavior)
    passed = j_improved >= j_behavior - margin
    log = logger.info if passed else logger.warning
    log(f"Safe improvement: J_improved {j_improved:.4f}, J_behavior {j_behavior:.4f}, margin {margin:.4f}")
    return SafetyReport(j_improved, j_behavior, margin, passed)


@dataclass
class SweepResult:
    parameter: str
    values: List[float]
    returns: List[float]

    @property
    def best(self) -> float:
        return self.values[int(np.argmax(self.returns))]

    def rows(self) -> List[Dict]:
        return [{self.parameter: v, "mean_return": r} for v, r in zip(self.values, self.returns)]


def _sweep(parameter: str, factory: Callable, values: Sequence, env: Env, episodes: int,
           rng: np.random.Generator) -> SweepResult:
    returns = []
    for value, value_rng in zip(values, spawn(rng, len(values))):
        result = rollout(env, factory(value), episodes, value_rng)
        returns.append(result.mean_return)
        logger.info(f"{parameter}={value}: mean return {result.mean_return:.4f}")
    return SweepResult(parameter, list(values), returns)


def tau_sweep(policy: ImprovedPolicy, env: Env, log_taus: Sequence[float] = DEFAULT_LOG_TAUS,
              episodes: int = 20, rng: Optional[np.random.Generator] = None) -> SweepResult:
    """Evaluate one policy at several trust-region sizes."""
    rng = np.random.default_rng(policy.seed) if rng is None else rng
    return _sweep("log_tau", lambda v: policy.replace(log_tau=float(v)), log_taus, env, episodes, rng)


def n_bcq_sweep(policy: ImprovedPolicy, env: Env, counts: Sequence[int] = DEFAULT_N_BCQ,
                episodes: int = 20, rng: Optional[np.random.Generator] = None) -> SweepResult:
    rng = np.random.default_rng(policy.seed) if rng is None else rng
    return _sweep("n_bcq", lambda v: policy.replace(operator="ebcq", n_bcq=int(v)), counts, env, episodes, rng)
