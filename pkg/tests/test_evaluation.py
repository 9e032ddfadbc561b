import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from src.error import DataLoadError, DataValidationError
from src.evaluation import (AGGREGATE_COLUMNS, PROFILE_COLUMNS, RunMatrix, _resample, aggregate_report,
                            append_score, iqm, iqm_statistic, mean_statistic, optimality_gap, performance_profile,
                            profile_band, stratified_bootstrap_ci)

scores = st.floats(min_value=-200.0, max_value=200.0)


def test_iqm_of_even_run_count():
    assert iqm(np.arange(1, 9)) == pytest.approx(4.5)


def test_iqm_weights_fractional_cut_points():
    assert iqm([5.0, 1.0, 4.0, 2.0, 3.0]) == pytest.approx(3.0)
    assert iqm([1.0, 2.0, 3.0, 100.0, 4.0]) == pytest.approx((0.75 * 2 + 3 + 0.75 * 4) / 2.5)
    assert iqm([7.0]) == 7.0
    with pytest.raises(DataValidationError):
        iqm([])


@given(st.lists(scores, min_size=1, max_size=40))
def test_iqm_lies_within_the_scores(values):
    result = iqm(values)
    assert min(values) - 1e-9 <= result <= max(values) + 1e-9
    assert iqm(values[::-1]) == pytest.approx(result, abs=1e-9)


def test_statistics_reduce_trailing_axes():
    stack = np.arange(24, dtype=np.float64).reshape(2, 3, 4)
    np.testing.assert_allclose(mean_statistic(stack), [5.5, 17.5])
    assert iqm_statistic(stack).shape == (2,)


def test_optimality_gap():
    assert optimality_gap(RunMatrix.from_array([[50.0, 150.0]]), 100.0) == pytest.approx(25.0)
    assert optimality_gap(np.array([[120.0, 130.0]]), 100.0) == 0.0
    with pytest.raises(DataValidationError):
        optimality_gap(np.array([[1.0]]), 0.0)


def test_matrix_from_records_keeps_last_duplicate():
    records = pd.DataFrame({"task": ["b", "a", "a", "b", "a"], "seed": [0, 0, 1, 1, 0],
                            "score": [1.0, 2.0, 3.0, 4.0, 5.0]})
    matrix = RunMatrix.from_records(records)
    assert matrix.tasks == ["a", "b"]
    np.testing.assert_array_equal(matrix.scores, [[5.0, 3.0], [1.0, 4.0]])


def test_matrix_rejects_ragged_or_incomplete_input():
    ragged = pd.DataFrame({"task": ["a", "a", "b"], "seed": [0, 1, 0], "score": [1.0, 2.0, 3.0]})
    with pytest.raises(DataValidationError):
        RunMatrix.from_records(ragged)
    with pytest.raises(DataValidationError):
        RunMatrix.from_records(pd.DataFrame({"task": ["a"], "score": [1.0]}))
    with pytest.raises(DataValidationError):
        RunMatrix(pd.DataFrame())


def test_score_file_accumulates(tmp_path):
    path = tmp_path / "scores" / "matrix.csv"
    for task, seed, score in [("chain", 0, 40.0), ("chain", 1, 60.0), ("bandit", 0, 1 / 3), ("bandit", 1, 90.0)]:
        append_score(path, task, seed, score)
    matrix = RunMatrix.read_csv(path)
    assert matrix.shape == (2, 2)
    assert matrix.frame.loc["bandit", 0] == pytest.approx(1 / 3, rel=1e-15)
    with pytest.raises(DataLoadError):
        RunMatrix.read_csv(tmp_path / "absent.csv")


def test_resampling_stays_within_each_task(rng):
    scores = np.repeat(np.arange(3, dtype=np.float64)[:, None], 5, axis=1)
    resampled = _resample(scores, 50, rng)
    assert resampled.shape == (50, 3, 5)
    for task in range(3):
        assert np.all(resampled[:, task, :] == task)


def test_constant_matrix_has_zero_width_interval(rng):
    matrix = RunMatrix.from_array(np.full((3, 5), 50.0))
    assert stratified_bootstrap_ci(matrix, iqm_statistic, 200, 0.95, rng) == (50.0, 50.0)


def test_bootstrap_validation(rng):
    matrix = RunMatrix.from_array(np.ones((2, 3)))
    with pytest.raises(DataValidationError):
        stratified_bootstrap_ci(matrix, mean_statistic, 99, 0.95, rng)
    with pytest.raises(DataValidationError):
        stratified_bootstrap_ci(matrix, mean_statistic, 200, 1.0, rng)


def test_profile_endpoints_and_monotonicity(rng):
    values = rng.uniform(0.0, 120.0, size=(4, 6))
    matrix = RunMatrix.from_array(values)
    thresholds = np.linspace(values.min(), values.max() + 1.0, 50)
    curve = performance_profile(matrix, thresholds)
    assert curve.fractions[0] == 1.0
    assert curve.fractions[-1] == 0.0
    assert np.all(np.diff(curve.fractions) <= 0)
    with pytest.raises(DataValidationError):
        performance_profile(matrix, [5.0, 1.0])


def test_profile_band_contains_curve(rng):
    matrix = RunMatrix.from_array(rng.normal(50.0, 20.0, size=(3, 5)))
    curve = profile_band(matrix, np.linspace(0.0, 100.0, 21), 200, 0.95, rng)
    assert np.all(curve.band_low <= curve.fractions)
    assert np.all(curve.fractions <= curve.band_high)
    assert list(curve.to_frame().columns) == PROFILE_COLUMNS


def test_report_brackets_points_and_is_reproducible(tmp_path):
    matrix = RunMatrix.from_array(np.random.default_rng(2).normal(70.0, 25.0, size=(3, 6)), ["x", "y", "z"])
    report = aggregate_report(matrix, 300, 0.9, np.random.default_rng(4))
    again = aggregate_report(matrix, 300, 0.9, np.random.default_rng(4))
    assert set(report.estimates) == {"median", "iqm", "mean", "optimality_gap"}
    for estimate in report.estimates.values():
        assert estimate.low <= estimate.point <= estimate.high
    pd.testing.assert_frame_equal(report.to_frame(), again.to_frame())
    assert (report.n_tasks, report.n_seeds) == (3, 6)
    aggregates, profile = report.write(tmp_path)
    assert list(pd.read_csv(aggregates).columns) == AGGREGATE_COLUMNS
    assert len(pd.read_csv(profile)) == 101


@pytest.mark.slow
def test_bootstrap_coverage_is_near_nominal():
    rng = np.random.default_rng(11)
    task_means = np.array([20.0, 50.0, 80.0])
    hits = 0
    for _ in range(200):
        matrix = RunMatrix.from_array(rng.normal(task_means[:, None], 15.0, size=(3, 10)))
        low, high = stratified_bootstrap_ci(matrix, mean_statistic, 500, 0.95, rng)
        hits += low <= task_means.mean() <= high
    assert abs(hits / 200 - 0.95) <= 0.07
