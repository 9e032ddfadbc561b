"""
Synthetic continuous-control environments, heterogeneous dataset generation,
the binary dataset format and Monte-Carlo rollouts.

Environments are small value objects; ``step`` takes the state explicitly so
one instance can serve many concurrent rollouts.
"""
import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from .config import CONFIG
from .critics import FunctionCritic
from .error import (ConfigurationError, DataLoadError, DataValidationError, DatasetFormatError,
                    DatasetTruncatedError, DimensionMismatchError)
from .gaussian_models import as_mixture, sample
from .models import DATASET_MAGIC, FIELDS, Dataset, DatasetHeader, Transition
from .seeding import spawn

logger = logging.getLogger("CFPI")

PolicyFn = Callable[[np.ndarray, np.random.Generator], np.ndarray]

_HEADER = struct.Struct("<IIQI")


class Env:
    """Base environment: bounds, horizon and the step contract."""
    name = "env"
    state_dim = 1
    action_dim = 1
    horizon = 1
    reward_bound = 1.0

    @property
    def action_low(self) -> np.ndarray:
        return -np.ones(self.action_dim)

    @property
    def action_high(self) -> np.ndarray:
        return np.ones(self.action_dim)

    def clip_action(self, action) -> np.ndarray:
        return np.clip(np.asarray(action, dtype=np.float64), self.action_low, self.action_high)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def step(self, state: np.ndarray, action: np.ndarray,
             rng: np.random.Generator) -> Tuple[np.ndarray, float, bool]:
        raise NotImplementedError

    def expert_policy(self) -> PolicyFn:
        raise NotImplementedError

    def behavior_policies(self) -> List[Tuple[PolicyFn, float]]:
        raise NotImplementedError


class GaussianActionPolicy:
    """a = clip(mean_fn(s) + std * eps) for a fixed noise scale."""

    def __init__(self, mean_fn: Callable[[np.ndarray], np.ndarray], std: float,
                 low: np.ndarray, high: np.ndarray, name: str):
        self.mean_fn = mean_fn
        self.std = float(std)
        self.low = np.asarray(low, dtype=np.float64)
        self.high = np.asarray(high, dtype=np.float64)
        self.name = name

    def __call__(self, state, rng: np.random.Generator) -> np.ndarray:
        mean = np.asarray(self.mean_fn(np.asarray(state, dtype=np.float64)), dtype=np.float64)
        return np.clip(mean + self.std * rng.standard_normal(mean.shape), self.low, self.high)

    def moments(self, state) -> Tuple[np.ndarray, np.ndarray]:
        """E[a] and E[a^2] of the clipped action, per coordinate."""
        mean = np.asarray(self.mean_fn(np.asarray(state, dtype=np.float64)), dtype=np.float64)
        return clipped_normal_moments(mean, self.std, self.low, self.high)


def clipped_normal_moments(mean, std, low, high) -> Tuple[np.ndarray, np.ndarray]:
    """First and second moments of clip(Z, low, high) for Z ~ N(mean, std^2), elementwise."""
    mean, std = np.broadcast_arrays(np.asarray(mean, dtype=np.float64), np.asarray(std, dtype=np.float64))
    random = std > 0
    scale = np.where(random, std, 1.0)
    alpha = (low - mean) / scale
    beta = (high - mean) / scale
    cdf_a, cdf_b = norm.cdf(alpha), norm.cdf(beta)
    pdf_a, pdf_b = norm.pdf(alpha), norm.pdf(beta)
    inside = cdf_b - cdf_a
    first = low * cdf_a + high * (1.0 - cdf_b) + mean * inside + scale * (pdf_a - pdf_b)
    second = (low * low * cdf_a + high * high * (1.0 - cdf_b)
              + (mean * mean + scale * scale) * inside + 2.0 * mean * scale * (pdf_a - pdf_b)
              + scale * scale * (alpha * pdf_a - beta * pdf_b))
    clipped = np.clip(mean, low, high)
    return np.where(random, first, clipped), np.where(random, second, clipped * clipped)


class MixtureActionPolicy:
    """Stochastic policy drawing clipped actions from a state-conditioned Gaussian model."""

    def __init__(self, model_fn: Callable, low, high, name: str = "mixture"):
        self.model_fn = model_fn
        self.low = np.asarray(low, dtype=np.float64)
        self.high = np.asarray(high, dtype=np.float64)
        self.name = name

    def __call__(self, state, rng: np.random.Generator) -> np.ndarray:
        return np.clip(sample(self.model_fn(state), rng), self.low, self.high)

    def moments(self, state) -> Tuple[np.ndarray, np.ndarray]:
        mixture = as_mixture(self.model_fn(state))
        first, second = clipped_normal_moments(mixture.means, np.sqrt(mixture.vars), self.low, self.high)
        return mixture.weights @ first, mixture.weights @ second


class QuadraticBandit(Env):
    """
    One-step task: s ~ U[-1, 1], reward -(a - a*)' H (a - a*) with
    a*(s) = 0.5 s ones and H = diag(1, 0.5).
    """
    name = "quad-bandit-v0"
    state_dim = 1
    action_dim = 2
    horizon = 1

    def __init__(self, curvature: Sequence[float] = (1.0, 0.5)):
        self.curvature = np.asarray(curvature, dtype=np.float64)
        self.reward_bound = float(4.0 * self.curvature.sum())

    def optimal_action(self, state) -> np.ndarray:
        return 0.5 * float(np.ravel(state)[0]) * np.ones(self.action_dim)

    def q_value(self, states, actions) -> np.ndarray:
        states = np.atleast_2d(states)
        actions = np.clip(np.atleast_2d(actions), -1.0, 1.0)
        gap = actions - 0.5 * states[:, :1]
        return -np.sum(gap * gap * self.curvature, axis=-1)

    def q_gradient(self, states, actions) -> np.ndarray:
        states = np.atleast_2d(states)
        raw = np.atleast_2d(actions)
        gap = np.clip(raw, -1.0, 1.0) - 0.5 * states[:, :1]
        inside = (raw > -1.0) & (raw < 1.0)
        return np.where(inside, -2.0 * self.curvature * gap, 0.0)

    def analytic_critic(self) -> FunctionCritic:
        """Exact Q(s, a) = r(s, a) and its action gradient."""
        return FunctionCritic(self.q_value, self.q_gradient)

    def expected_return(self, policy, grid: int = 401) -> float:
        """
        Exact expected reward over s ~ U[-1, 1] (midpoint rule in s). Policies
        with ``moments`` are integrated analytically over their action noise;
        anything else is treated as deterministic.
        """
        states = -1.0 + (np.arange(grid) + 0.5) * (2.0 / grid)
        total = 0.0
        for s in states:
            state = np.array([s])
            target = self.optimal_action(state)
            if hasattr(policy, "moments"):
                first, second = policy.moments(state)
            else:
                first = self.clip_action(_act(policy, state))
                second = first * first
            total -= float(np.sum(self.curvature * (second - 2.0 * target * first + target * target)))
        return total / grid

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=1)

    def step(self, state, action, rng):
        reward = float(self.q_value(state, self.clip_action(action))[0])
        return np.asarray(state, dtype=np.float64).copy(), reward, True

    def expert_policy(self) -> PolicyFn:
        return GaussianActionPolicy(self.optimal_action, 0.0, self.action_low, self.action_high, "optimal")

    def behavior_policies(self) -> List[Tuple[PolicyFn, float]]:
        low, high = self.action_low, self.action_high
        near = GaussianActionPolicy(lambda s: self.optimal_action(s) + 0.2, 0.2, low, high, "near")
        far = GaussianActionPolicy(lambda s: -self.optimal_action(s), 0.3, low, high, "far")
        return [(near, 0.5), (far, 0.5)]


class ChainMdp(Env):
    """
    K states on a line, embedded as s = k / (K - 1). The clipped action a
    moves right with probability (1 + a) / 2, left otherwise (walls hold).
    Reward w_k - 0.5 (a - reward_center)^2 with w_k = k / (K - 1), plus
    zero-mean Gaussian noise of scale reward_noise on sampled steps only.
    """
    name = "chain-v0"
    state_dim = 1
    action_dim = 1

    def __init__(self, n_states: int = 5, horizon: int = 20, reward_center: float = 0.0,
                 reward_noise: float = 0.0):
        if n_states < 2:
            raise ConfigurationError(f"Chain needs at least two states, got {n_states}")
        if reward_noise < 0:
            raise ConfigurationError(f"reward_noise cannot be negative, got {reward_noise}")
        self.n_states = n_states
        self.horizon = horizon
        self.reward_center = reward_center
        self.reward_noise = float(reward_noise)
        self.rewards = np.arange(n_states) / (n_states - 1)
        self.reward_bound = 1.0 + 0.5 * (1.0 + abs(reward_center)) ** 2

    def index(self, state) -> int:
        return int(np.clip(round(float(np.ravel(state)[0]) * (self.n_states - 1)), 0, self.n_states - 1))

    def state_of(self, index: int) -> np.ndarray:
        return np.array([index / (self.n_states - 1)])

    def neighbors(self, index: int) -> Tuple[int, int]:
        return max(index - 1, 0), min(index + 1, self.n_states - 1)

    def reward(self, index: int, action: float) -> float:
        return float(self.rewards[index] - 0.5 * (action - self.reward_center) ** 2)

    def reset(self, rng):
        return self.state_of(int(rng.integers(self.n_states)))

    def step(self, state, action, rng):
        k = self.index(state)
        a = float(self.clip_action(action)[0])
        reward = self.reward(k, a)
        if self.reward_noise > 0:
            reward += self.reward_noise * float(rng.standard_normal())
        left, right = self.neighbors(k)
        nxt = right if rng.random() < 0.5 * (1.0 + a) else left
        return self.state_of(nxt), reward, False

    # -- dynamic-programming oracle -----------------------------------------

    def _moments(self, policy) -> np.ndarray:
        """(K, 2): E[a], E[a^2] of the executed action in each state."""
        table = np.zeros((self.n_states, 2))
        for k in range(self.n_states):
            state = self.state_of(k)
            if hasattr(policy, "moments"):
                first, second = policy.moments(state)
                table[k] = float(np.ravel(first)[0]), float(np.ravel(second)[0])
            else:
                a = float(self.clip_action(_act(policy, state))[0])
                table[k] = a, a * a
        return table

    def _expected_step(self, moments: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Expected reward vector (K,) and transition matrix (K, K) under a policy."""
        c = self.reward_center
        reward = self.rewards - 0.5 * (moments[:, 1] - 2.0 * c * moments[:, 0] + c * c)
        transition = np.zeros((self.n_states, self.n_states))
        for k in range(self.n_states):
            left, right = self.neighbors(k)
            p_right = 0.5 * (1.0 + moments[k, 0])
            transition[k, right] += p_right
            transition[k, left] += 1.0 - p_right
        return reward, transition

    def policy_values(self, policy, gamma: float) -> np.ndarray:
        """Discounted infinite-horizon V^pi per state."""
        reward, transition = self._expected_step(self._moments(policy))
        return np.linalg.solve(np.eye(self.n_states) - gamma * transition, reward)

    def policy_q(self, policy, gamma: float, states, actions) -> np.ndarray:
        """Q^pi(s, a) = r(s, a) + gamma E[V^pi(s')] for each row."""
        values = self.policy_values(policy, gamma)
        return self._q_rows(values, gamma, states, actions)

    def _q_rows(self, values, gamma, states, actions) -> np.ndarray:
        states = np.atleast_2d(states)
        actions = np.clip(np.atleast_2d(actions)[:, 0], -1.0, 1.0)
        out = np.empty(states.shape[0])
        for i, (state, a) in enumerate(zip(states, actions)):
            k = self.index(state)
            left, right = self.neighbors(k)
            p_right = 0.5 * (1.0 + a)
            out[i] = self.reward(k, a) + gamma * (p_right * values[right] + (1.0 - p_right) * values[left])
        return out

    def analytic_critic(self, policy, gamma: float) -> FunctionCritic:
        """Exact Q^pi with dQ/da = -(a - c) + gamma (V_right - V_left) / 2 inside the bounds."""
        values = self.policy_values(policy, gamma)

        def gradient(states, actions):
            raw = np.atleast_2d(actions)[:, 0]
            out = np.zeros((len(raw), 1))
            for i, (state, a) in enumerate(zip(np.atleast_2d(states), raw)):
                if -1.0 < a < 1.0:
                    left, right = self.neighbors(self.index(state))
                    out[i, 0] = -(a - self.reward_center) + 0.5 * gamma * (values[right] - values[left])
            return out

        return FunctionCritic(lambda s, a: self._q_rows(values, gamma, s, a), gradient)

    def expected_return(self, policy, horizon: Optional[int] = None) -> float:
        """Undiscounted finite-horizon return from a uniform start state."""
        horizon = self.horizon if horizon is None else horizon
        reward, transition = self._expected_step(self._moments(policy))
        value = np.zeros(self.n_states)
        for _ in range(horizon):
            value = reward + transition @ value
        return float(value.mean())

    def optimal_return(self, horizon: Optional[int] = None, grid: int = 201) -> float:
        """Finite-horizon optimum by value iteration over an action grid."""
        horizon = self.horizon if horizon is None else horizon
        actions = np.linspace(-1.0, 1.0, grid)
        value = np.zeros(self.n_states)
        for _ in range(horizon):
            new = np.empty(self.n_states)
            for k in range(self.n_states):
                left, right = self.neighbors(k)
                p_right = 0.5 * (1.0 + actions)
                totals = (self.rewards[k] - 0.5 * (actions - self.reward_center) ** 2
                          + p_right * value[right] + (1.0 - p_right) * value[left])
                new[k] = totals.max()
            value = new
        return float(value.mean())

    def expert_policy(self) -> PolicyFn:
        return GaussianActionPolicy(lambda s: np.array([0.8]), 0.0, self.action_low, self.action_high, "right")

    def behavior_policies(self) -> List[Tuple[PolicyFn, float]]:
        low, high = self.action_low, self.action_high
        cautious = GaussianActionPolicy(lambda s: np.array([0.0]), 0.5, low, high, "cautious")
        eager = GaussianActionPolicy(lambda s: np.array([0.6]), 0.3, low, high, "eager")
        return [(cautious, 0.5), (eager, 0.5)]


class PointMass2D(Env):
    """
    Point mass with state (position, velocity) in the plane.
    v' = 0.9 v + 0.5 a, p' = clip(p + 0.1 v', -2, 2), reward -||p' - goal||.
    """
    name = "pointmass-bimodal-v0"
    state_dim = 4
    action_dim = 2
    horizon = 50

    def __init__(self, goal=(0.5, 0.5), offset=(-0.5, -0.5), noise: float = 0.1):
        self.goal = np.asarray(goal, dtype=np.float64)
        self.offset = np.asarray(offset, dtype=np.float64)
        self.noise = noise
        self.reward_bound = float(np.sqrt(2.0) * 4.0)

    def reset(self, rng):
        return np.concatenate([rng.uniform(-1.0, 1.0, size=2), np.zeros(2)])

    def step(self, state, action, rng):
        state = np.asarray(state, dtype=np.float64)
        a = self.clip_action(action)
        velocity = 0.9 * state[2:] + 0.5 * a
        position = np.clip(state[:2] + 0.1 * velocity, -2.0, 2.0)
        reward = -float(np.linalg.norm(position - self.goal))
        return np.concatenate([position, velocity]), reward, False

    def controller(self, target: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
        def mean(state):
            return np.clip(2.0 * (target - state[:2]) - state[2:], -1.0, 1.0)
        return mean

    def expert_policy(self) -> PolicyFn:
        return GaussianActionPolicy(self.controller(self.goal), 0.0, self.action_low, self.action_high, "expert")

    def behavior_policies(self) -> List[Tuple[PolicyFn, float]]:
        low, high = self.action_low, self.action_high
        expert = GaussianActionPolicy(self.controller(self.goal), self.noise, low, high, "expert")
        mediocre = GaussianActionPolicy(self.controller(self.offset), self.noise, low, high, "mediocre")
        return [(expert, 0.5), (mediocre, 0.5)]


ENVIRONMENTS: Dict[str, Callable[[], Env]] = {
    QuadraticBandit.name: QuadraticBandit,
    ChainMdp.name: ChainMdp,
    PointMass2D.name: PointMass2D,
}


def make_env(name: str) -> Env:
    try:
        return ENVIRONMENTS[name]()
    except KeyError:
        raise ConfigurationError(f"Unknown environment {name!r}; known: {', '.join(ENVIRONMENTS)}") from None


def _act(policy, state, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    if hasattr(policy, "act"):
        return policy.act(state)
    return policy(state, rng if rng is not None else np.random.default_rng(0))


def allocate_episodes(fractions: Sequence[float], episodes: int) -> List[int]:
    """Largest-remainder split of ``episodes`` by ``fractions``."""
    fractions = np.asarray(fractions, dtype=np.float64)
    if episodes < 1:
        raise DataValidationError(f"Need at least one episode, got {episodes}")
    if np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise DataValidationError(f"Policy fractions must be non-negative and sum to 1, got {fractions.tolist()}")
    exact = fractions * episodes
    counts = np.floor(exact).astype(int)
    remainder = episodes - counts.sum()
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:remainder]] += 1
    return counts.tolist()


def _episode(env: Env, policy: PolicyFn, rng: np.random.Generator) -> List[Transition]:
    transitions = []
    state = env.reset(rng)
    action = env.clip_action(policy(state, rng))
    for t in range(env.horizon):
        next_state, reward, done = env.step(state, action, rng)
        next_action = None if done else env.clip_action(policy(next_state, rng))
        transitions.append(Transition(state, action, reward, next_state, next_action, done))
        if done:
            break
        state, action = next_state, next_action
    return transitions


def generate_heterogeneous(env: Env, policies: Sequence[Tuple[PolicyFn, float]], episodes: int,
                           rng: np.random.Generator, seed: Optional[int] = None) -> Dataset:
    """
    Roll out every policy for its share of ``episodes``. Each transition's a'
    comes from the policy that generated it; metadata records which rows
    belong to which generator.
    """
    counts = allocate_episodes([fraction for _, fraction in policies], episodes)
    transitions: List[Transition] = []
    segments = []
    names = []
    for index, ((policy, _), count) in enumerate(zip(policies, counts)):
        names.append(getattr(policy, "name", f"policy_{index}"))
        start = len(transitions)
        for episode_rng in spawn(rng, count):
            transitions.extend(_episode(env, policy, episode_rng))
        segments.append([start, len(transitions), index])
        logger.debug(f"Policy {names[-1]}: {count} episodes, {len(transitions) - start} transitions")
    metadata = {"env": env.name, "policies": names, "episode_counts": counts, "segments": segments}
    if seed is not None:
        metadata["seed"] = int(seed)
    dataset = Dataset.from_transitions(transitions, metadata)
    logger.info(f"Generated {len(dataset)} transitions from {episodes} episodes on {env.name}")
    return dataset


def write_dataset(dataset: Dataset, path) -> Path:
    """magic, <u4 ds, <u4 da, <u8 n, <u4 metadata length, metadata JSON, float32 field blocks."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metadata = json.dumps(dataset.metadata, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(_HEADER.pack(dataset.state_dim, dataset.action_dim, len(dataset), len(metadata)))
        f.write(metadata)
        f.write(dataset.payload())
    return path


def read_header(raw: bytes, source: str = "<bytes>") -> Tuple[DatasetHeader, int]:
    if not raw.startswith(DATASET_MAGIC):
        raise DatasetFormatError(f"{source} is not a dataset file (bad magic)")
    offset = len(DATASET_MAGIC)
    if len(raw) < offset + _HEADER.size:
        raise DatasetTruncatedError(f"{source} ends inside the header")
    state_dim, action_dim, count, meta_len = _HEADER.unpack_from(raw, offset)
    offset += _HEADER.size
    if len(raw) < offset + meta_len:
        raise DatasetTruncatedError(f"{source} ends inside the metadata block")
    try:
        metadata = json.loads(raw[offset:offset + meta_len].decode("utf-8")) if meta_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DatasetFormatError(f"{source} has unreadable metadata", cause=e) from e
    try:
        header = DatasetHeader(state_dim, action_dim, count, metadata)
    except DataValidationError as e:
        raise DatasetFormatError(f"{source} has an invalid header: {e}", cause=e) from e
    return header, offset + meta_len


def read_dataset(path) -> Dataset:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataLoadError(f"Cannot read dataset {path}", cause=e) from e
    header, offset = read_header(raw, str(path))
    payload = len(raw) - offset
    if payload != header.payload_bytes:
        row_bytes = 4 * header.count
        width = payload // row_bytes if row_bytes else 0
        if row_bytes and payload % row_bytes == 0 and width >= 6 and width % 2 == 0:
            raise DimensionMismatchError(
                f"{path}: header declares {header.row_width} values per transition "
                f"(state {header.state_dim}, action {header.action_dim}) but the payload holds {width}"
            )
        if payload < header.payload_bytes:
            raise DatasetTruncatedError(f"{path}: payload has {payload} bytes, header promises {header.payload_bytes}")
        raise DatasetFormatError(f"{path}: {payload - header.payload_bytes} unexpected trailing bytes")
    n, ds, da = header.count, header.state_dim, header.action_dim
    shapes = {"states": (n, ds), "actions": (n, da), "rewards": (n,),
              "next_states": (n, ds), "next_actions": (n, da), "dones": (n,)}
    arrays = {}
    for name in FIELDS:
        size = int(np.prod(shapes[name]))
        arrays[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=offset).reshape(shapes[name])
        offset += 4 * size
    return Dataset(**arrays, metadata=header.metadata)


@dataclass
class RolloutResult:
    mean_return: float
    returns: np.ndarray


def _run_episode(env: Env, policy: PolicyFn, rng: np.random.Generator) -> float:
    state = env.reset(rng)
    total = 0.0
    for _ in range(env.horizon):
        state, reward, done = env.step(state, policy(state, rng), rng)
        total += reward
        if done:
            break
    return total


def rollout(env: Env, policy: PolicyFn, episodes: int, rng: np.random.Generator,
            threads: Optional[int] = None) -> RolloutResult:
    """Monte-Carlo returns; every episode owns a generator split off ``rng`` up front."""
    if episodes < 1:
        raise DataValidationError(f"Need at least one episode, got {episodes}")
    episode_rngs = spawn(rng, episodes)
    workers = max(1, min(threads or CONFIG.threads, episodes))
    if workers == 1:
        returns = [_run_episode(env, policy, r) for r in episode_rngs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            returns = list(pool.map(lambda r: _run_episode(env, policy, r), episode_rngs))
    returns = np.asarray(returns)
    return RolloutResult(float(returns.mean()), returns)


def normalized_score(raw: float, random_ref: float, expert_ref: float) -> float:
    """100 (raw - random) / (expert - random)."""
    if not np.isfinite(random_ref) or not np.isfinite(expert_ref) or abs(expert_ref - random_ref) < 1e-12:
        raise DataValidationError(f"Degenerate reference scores: random {random_ref}, expert {expert_ref}")
    return 100.0 * (raw - random_ref) / (expert_ref - random_ref)


def uniform_policy(env: Env) -> PolicyFn:
    return lambda state, rng: rng.uniform(env.action_low, env.action_high)


@lru_cache(maxsize=None)
def reference_scores(name: str, episodes: int = 200, seed: int = 0) -> Tuple[float, float]:
    """(random, expert) returns for an environment, from fixed-seed rollouts."""
    env = make_env(name)
    rng = np.random.default_rng(seed)
    random_ref = rollout(env, uniform_policy(env), episodes, rng, threads=1).mean_return
    if isinstance(env, ChainMdp):
        expert_ref = env.optimal_return()
    else:
        expert_ref = rollout(env, env.expert_policy(), episodes, rng, threads=1).mean_return
    logger.debug(f"Reference scores for {name}: random {random_ref:.4f}, expert {expert_ref:.4f}")
    return random_ref, expert_ref
