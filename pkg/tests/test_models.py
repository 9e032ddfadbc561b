import numpy as np
import pytest

from src.error import DataValidationError, ShapeError
from src.models import Dataset, DatasetHeader, Transition


def numbered_dataset(count=10):
    states = np.arange(count, dtype=np.float64)[:, None]
    actions = np.zeros((count, 1))
    return Dataset(states, actions, np.arange(count), states + 1, actions, np.zeros(count))


def test_terminal_transition_fills_next_action():
    transition = Transition([0.0, 1.0], [0.5], 1.0, [0.0, 1.0], None, done=True)
    np.testing.assert_array_equal(transition.next_action, [0.0])


def test_transition_validation():
    with pytest.raises(DataValidationError):
        Transition([0.0], [0.5], 1.0, [1.0], None)
    with pytest.raises(ShapeError):
        Transition([0.0], [0.5], 1.0, [1.0, 2.0], [0.5])
    with pytest.raises(ShapeError):
        Transition([0.0], [0.5], 1.0, [1.0], [0.5, 0.1])
    with pytest.raises(DataValidationError):
        Transition([0.0], [0.5], float("nan"), [1.0], [0.5])


def test_dataset_validation():
    with pytest.raises(DataValidationError):
        Dataset(np.zeros((2, 1)), np.zeros((2, 1)), np.zeros(2), np.zeros((2, 1)), np.zeros((2, 1)), [0.0, 0.5])
    with pytest.raises(ShapeError):
        Dataset(np.zeros((2, 1)), np.zeros((3, 1)), np.zeros(2), np.zeros((2, 1)), np.zeros((2, 1)), np.zeros(2))
    with pytest.raises(DataValidationError):
        Dataset(np.zeros((2, 1)), np.zeros((2, 1)), [0.0, np.inf], np.zeros((2, 1)), np.zeros((2, 1)), np.zeros(2))


def test_split_partitions_rows(rng):
    dataset = numbered_dataset(10)
    train, validation = dataset.split(0.95, rng)
    assert len(train) == 9 and len(validation) == 1
    rows = np.sort(np.concatenate([train.rewards, validation.rewards]))
    np.testing.assert_array_equal(rows, np.arange(10))
    with pytest.raises(DataValidationError):
        dataset.split(1.0, rng)
    with pytest.raises(DataValidationError):
        numbered_dataset(1).split(0.5, rng)


def test_batches_are_float64_and_hide_missing_next_actions():
    dataset = numbered_dataset(3)
    dataset.next_actions[2] = np.nan
    dataset.dones[2] = 1.0
    dataset.require_next_actions()
    batch = dataset.full_batch()
    assert batch.states.dtype == np.float64
    np.testing.assert_array_equal(batch.next_actions[2], [0.0])
    dataset.dones[2] = 0.0
    with pytest.raises(DataValidationError):
        dataset.require_next_actions()


def test_header_sizes():
    header = DatasetHeader(3, 2, 10)
    assert header.row_width == 12
    assert header.payload_bytes == 480
    with pytest.raises(DataValidationError):
        DatasetHeader(0, 2, 10)
    with pytest.raises(DataValidationError):
        DatasetHeader(1, 1, -1)


def test_from_transitions_and_concatenate():
    transitions = [Transition([0.0], [0.1], 1.0, [1.0], [0.2]), Transition([1.0], [0.2], 0.5, [1.0], None, True)]
    dataset = Dataset.from_transitions(transitions, {"env": "test"})
    assert len(dataset) == 2 and dataset.metadata == {"env": "test"}
    joined = Dataset.concatenate([dataset, dataset])
    assert len(joined) == 4
    np.testing.assert_array_equal(joined.dones, [0.0, 1.0, 0.0, 1.0])
    with pytest.raises(DataValidationError):
        Dataset.from_transitions([])
    with pytest.raises(DataValidationError):
        Dataset.concatenate([])
