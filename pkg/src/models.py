"""
Core data models for offline transition datasets.
"""
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .error import DataValidationError, ShapeError

DATASET_MAGIC = b"CFPI1"
FIELDS = ("states", "actions", "rewards", "next_states", "next_actions", "dones")


@dataclass
class Transition:
    """One (s, a, r, s', a', done) tuple."""
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    next_action: Optional[np.ndarray]
    done: bool = False

    def __post_init__(self):
        self.state = np.atleast_1d(np.asarray(self.state, dtype=np.float64))
        self.action = np.atleast_1d(np.asarray(self.action, dtype=np.float64))
        self.next_state = np.atleast_1d(np.asarray(self.next_state, dtype=np.float64))
        if self.next_state.shape != self.state.shape:
            raise ShapeError(f"next_state {self.next_state.shape} differs from state {self.state.shape}")
        if self.next_action is None:
            if not self.done:
                raise DataValidationError("Non-terminal transitions need a next action")
            self.next_action = np.zeros_like(self.action)
        self.next_action = np.atleast_1d(np.asarray(self.next_action, dtype=np.float64))
        if self.next_action.shape != self.action.shape:
            raise ShapeError(f"next_action {self.next_action.shape} differs from action {self.action.shape}")
        if not np.isfinite(self.reward):
            raise DataValidationError(f"Reward must be finite, got {self.reward}")


@dataclass
class DatasetHeader:
    """Header of the on-disk dataset: dimensions, count and generator metadata."""
    state_dim: int
    action_dim: int
    count: int
    metadata: Dict = field(default_factory=dict)
    magic: bytes = DATASET_MAGIC

    def __post_init__(self):
        if self.state_dim < 1 or self.action_dim < 1:
            raise DataValidationError(f"Dimensions must be positive, got ({self.state_dim}, {self.action_dim})")
        if self.count < 0:
            raise DataValidationError(f"Transition count cannot be negative, got {self.count}")

    @property
    def row_width(self) -> int:
        """float32 values per transition across all field blocks."""
        return 2 * self.state_dim + 2 * self.action_dim + 2

    @property
    def payload_bytes(self) -> int:
        return 4 * self.count * self.row_width


@dataclass
class Batch:
    """A minibatch in float64, ready for the networks."""
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    next_actions: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]


@dataclass(eq=False)
class Dataset:
    """
    Column-stored transitions. Arrays are float32 as on disk; batches are
    handed out in float64.
    """
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    next_actions: np.ndarray
    dones: np.ndarray
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.ascontiguousarray(np.atleast_2d(self.states), dtype=np.float32)
        self.actions = np.ascontiguousarray(np.atleast_2d(self.actions), dtype=np.float32)
        self.next_states = np.ascontiguousarray(np.atleast_2d(self.next_states), dtype=np.float32)
        self.next_actions = np.ascontiguousarray(np.atleast_2d(self.next_actions), dtype=np.float32)
        self.rewards = np.ascontiguousarray(np.ravel(self.rewards), dtype=np.float32)
        self.dones = np.ascontiguousarray(np.ravel(self.dones), dtype=np.float32)
        n = self.states.shape[0]
        for name in FIELDS:
            if getattr(self, name).shape[0] != n:
                raise ShapeError(f"Field {name} has {getattr(self, name).shape[0]} rows, expected {n}")
        if self.next_states.shape != self.states.shape:
            raise ShapeError("next_states and states differ in shape")
        if self.next_actions.shape != self.actions.shape:
            raise ShapeError("next_actions and actions differ in shape")
        if not np.all(np.isin(self.dones, (0.0, 1.0))):
            raise DataValidationError("Done flags must be 0 or 1")
        if not np.all(np.isfinite(self.rewards)):
            raise DataValidationError("Rewards must be finite")

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    @property
    def header(self) -> DatasetHeader:
        return DatasetHeader(self.state_dim, self.action_dim, len(self), dict(self.metadata))

    def require_next_actions(self) -> None:
        """SARSA needs a' on every non-terminal row."""
        live = self.dones == 0
        if not np.all(np.isfinite(self.next_actions[live])):
            raise DataValidationError("Dataset is missing next actions on non-terminal transitions")

    def batch(self, indices: np.ndarray) -> Batch:
        return Batch(
            self.states[indices].astype(np.float64),
            self.actions[indices].astype(np.float64),
            self.rewards[indices].astype(np.float64),
            self.next_states[indices].astype(np.float64),
            np.nan_to_num(self.next_actions[indices].astype(np.float64)),
            self.dones[indices].astype(np.float64),
        )

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if len(self) == 0:
            raise DataValidationError("Cannot sample from an empty dataset")
        return self.batch(rng.integers(0, len(self), size=batch_size))

    def full_batch(self) -> Batch:
        return self.batch(np.arange(len(self)))

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(*(getattr(self, name)[indices] for name in FIELDS), metadata=dict(self.metadata))

    def split(self, ratio: float, rng: np.random.Generator) -> Tuple["Dataset", "Dataset"]:
        """Random (train, validation) split; both sides keep at least one row."""
        if not 0 < ratio < 1:
            raise DataValidationError(f"Split ratio must lie in (0, 1), got {ratio}")
        if len(self) < 2:
            raise DataValidationError("Need at least two transitions to split")
        order = rng.permutation(len(self))
        n_train = int(np.clip(round(ratio * len(self)), 1, len(self) - 1))
        return self.subset(np.sort(order[:n_train])), self.subset(np.sort(order[n_train:]))

    def transitions(self) -> Iterator[Transition]:
        for i in range(len(self)):
            yield Transition(self.states[i], self.actions[i], float(self.rewards[i]),
                             self.next_states[i], self.next_actions[i], bool(self.dones[i]))

    def payload_blocks(self) -> Iterator[np.ndarray]:
        """Little-endian float32 field blocks: all s, then all a, r, s', a', done."""
        for name in FIELDS:
            yield np.ascontiguousarray(getattr(self, name), dtype="<f4")

    def payload(self) -> bytes:
        return b"".join(block.tobytes() for block in self.payload_blocks())

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition], metadata: Optional[Dict] = None) -> "Dataset":
        if len(transitions) == 0:
            raise DataValidationError("Cannot build a dataset from zero transitions")
        return cls(
            np.stack([t.state for t in transitions]),
            np.stack([t.action for t in transitions]),
            np.array([t.reward for t in transitions]),
            np.stack([t.next_state for t in transitions]),
            np.stack([t.next_action for t in transitions]),
            np.array([float(t.done) for t in transitions]),
            metadata=dict(metadata or {}),
        )

    @classmethod
    def concatenate(cls, parts: List["Dataset"], metadata: Optional[Dict] = None) -> "Dataset":
        if not parts:
            raise DataValidationError("Nothing to concatenate")
        return cls(*(np.concatenate([getattr(p, name) for p in parts]) for name in FIELDS),
                   metadata=dict(metadata or {}))
