import numpy as np
import pytest

from src.cfpi_ops import ActionGradient, improve_lse
from src.gaussian_models import DiagGaussian, GaussianMixture
from src.oracles import (SuiteResult, check_bounds, check_chain_dp, check_reduction, oracle_jensen, oracle_lse,
                         oracle_sg, random_instances, run_oracle_suite, solve_qclp)


def test_solver_recovers_worked_examples():
    unit = DiagGaussian(np.zeros(2), np.ones(2))
    np.testing.assert_allclose(oracle_sg(unit, np.array([3.0, 4.0]), 0.5), [0.6, 0.8], atol=1e-9)
    stretched = DiagGaussian(np.zeros(2), np.array([4.0, 1.0]))
    np.testing.assert_allclose(oracle_sg(stretched, np.array([1.0, 0.0]), 0.5), [2.0, 0.0], atol=1e-9)


def test_solver_edge_cases():
    centers = np.array([[-3.0], [3.0]])
    precisions = np.ones((2, 1))
    assert solve_qclp([1.0], centers, precisions, [0.5, 0.5], 1.0) is None
    np.testing.assert_array_equal(solve_qclp([0.0], centers, precisions, [0.5, 0.5], 10.0), [0.0])
    np.testing.assert_array_equal(solve_qclp([2.0], [[1.0]], [[1.0]], [1.0], 0.0), [1.0])


def test_lse_oracle_agrees_with_operator(bimodal):
    grads = np.array([[5.0], [1.0]])
    best, value, index = oracle_lse(bimodal, grads, 0.5)
    operator = improve_lse(bimodal, [ActionGradient(g, m) for g, m in zip(grads, bimodal.means)], 0.5)
    assert index == operator.index == 1
    np.testing.assert_allclose(best, operator.action, atol=1e-9)
    assert value == pytest.approx(operator.q_value, rel=1e-9)


def test_jensen_oracle_on_coincident_means():
    mixture = GaussianMixture([0.5, 0.5], [[0.0], [0.0]], [[1.0], [1.0]])
    np.testing.assert_allclose(oracle_jensen(mixture, np.array([1.0]), 0.5), [1.0], atol=1e-9)


def test_suite_result_bookkeeping():
    result = SuiteResult("demo")
    result.record(1e-9, 1e-6, "fine")
    assert result.passed
    result.record(1e-3, 1e-6, "broken")
    result.record(float("nan"), 1e-6, "nan")
    assert not result.passed
    assert (result.checked, result.failures) == (3, 2)
    assert result.worst == pytest.approx(1e-3)
    assert result.examples[0].startswith("broken")


def test_random_instances_respect_ranges(rng):
    for inst in random_instances(rng, 50):
        assert 1 <= inst.mixture.dim <= 10
        assert 1 <= inst.mixture.n_components <= 8
        assert inst.grads.shape == inst.mixture.means.shape
        assert inst.log_tau in (0.1, 0.5, 1.5)


def test_individual_checks_pass(rng):
    assert check_bounds(rng, 200).passed
    assert check_reduction(rng, 50).passed
    assert check_chain_dp(rng, episodes=200).passed


def test_small_suite_passes():
    report = run_oracle_suite(instances=60, rng=np.random.default_rng(1), bound_pairs=200,
                              reduction_instances=30, chain_episodes=200)
    assert report.passed, report.to_frame().to_string()
    assert [s.name for s in report.suites] == ["sg_qclp", "sg_kkt", "lse_qclp", "jensen_qclp", "bounds",
                                               "reduction", "chain_dp"]
    assert report.suite("sg_qclp").checked == 60
    assert report.to_dict()["passed"] is True
    assert list(report.to_frame().columns) == ["suite", "checked", "failures", "worst"]


@pytest.mark.slow
def test_full_suite_passes():
    assert run_oracle_suite(rng=np.random.default_rng(0)).passed
