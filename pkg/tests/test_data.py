import numpy as np
import pandas as pd
import pytest

from src.data import RunDirectory, dataset_hash, dump_json, fnv1a_64, load_json
from src.error import DataLoadError
from src.seeding import RandomStreams, spawn


def test_fnv1a_reference_values():
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C


def test_fnv1a_streams_across_chunks_and_buffers():
    payload = bytes(range(256)) * 700
    whole = fnv1a_64(payload)
    assert fnv1a_64(payload[70000:], fnv1a_64(payload[:70000])) == whole
    values = np.arange(12, dtype="<f4").reshape(3, 4)
    assert fnv1a_64(values) == fnv1a_64(values.tobytes())


def test_dataset_hash_matches_payload_bytes(chain_dataset):
    assert dataset_hash(chain_dataset) == f"{fnv1a_64(chain_dataset.payload()):016x}"


def test_dataset_hash_tracks_payload(chain_dataset):
    digest = dataset_hash(chain_dataset)
    assert len(digest) == 16
    assert dataset_hash(chain_dataset.subset(np.arange(len(chain_dataset)))) == digest
    assert dataset_hash(chain_dataset.subset(np.arange(len(chain_dataset) - 1))) != digest


def test_json_accepts_numpy_values(tmp_path):
    path = tmp_path / "doc.json"
    dump_json({"scores": np.array([0.1, 1 / 3]), "count": np.int64(4), "pair": (1, 2)}, path)
    document = load_json(path)
    assert document == {"count": 4, "pair": [1, 2], "scores": [0.1, 1 / 3]}
    with pytest.raises(DataLoadError):
        load_json(tmp_path / "absent.json")


def test_run_directory_layout(tmp_path):
    run = RunDirectory(tmp_path / "run")
    assert run.checkpoints.is_dir()
    run.write_config({"command": "bc", "config": {"seed": 3}})
    run.write_log([{"step": 1, "bc_loss": 0.5}, {"step": 2, "bc_loss": 0.25}], ["step", "bc_loss"])
    run.write_result({"heldout_nll": 1.5})
    assert run.read_config()["config"]["seed"] == 3
    pd.testing.assert_frame_equal(run.read_log(), pd.DataFrame({"step": [1, 2], "bc_loss": [0.5, 0.25]}))
    assert run.read_result() == {"heldout_nll": 1.5}


def test_run_files_are_reproducible(tmp_path):
    contents = []
    for name in ("a", "b"):
        run = RunDirectory(tmp_path / name)
        run.write_result({"score": 0.1 + 0.2, "nested": {"z": 1, "a": [1.5]}})
        contents.append(run.result_path.read_text())
    assert contents[0] == contents[1]


def test_missing_log_is_a_load_error(tmp_path):
    with pytest.raises(DataLoadError):
        RunDirectory(tmp_path / "empty").read_log()


def test_named_streams_are_stable_and_independent():
    streams = RandomStreams(42)
    assert streams.generator("bc") is streams.generator("bc")
    first = RandomStreams(42).fresh("bc").random(4)
    np.testing.assert_array_equal(first, RandomStreams(42).fresh("bc").random(4))
    assert not np.array_equal(first, RandomStreams(42).fresh("critic").random(4))
    assert not np.array_equal(first, RandomStreams(43).fresh("bc").random(4))


def test_spawn_is_deterministic():
    left = [g.random() for g in spawn(np.random.default_rng(5), 3)]
    right = [g.random() for g in spawn(np.random.default_rng(5), 3)]
    assert left == right
    assert len(set(left)) == 3
