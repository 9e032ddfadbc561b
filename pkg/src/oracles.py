"""
Independent numerical checks for the closed-form operators.

Each operator solves a linear objective g'mu under one quadratic constraint.
The solvers here never use the closed forms: they write the constraint out
term by term, follow the Lagrangian stationarity path
mu(t) = anchor + t g / P (t the inverse multiplier) and locate the active
constraint with brentq. Densities are taken from scipy.stats.norm rather than
from gaussian_models.

``run_oracle_suite`` bundles those solvers with the bound, reduction and
chain dynamic-programming checks into one report.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.stats import norm

from .cfpi_ops import (ActionGradient, delta_jensen, delta_lse, delta_sg, improve_jensen,
                       improve_lse, improve_sg)
from .envsuite import ChainMdp, GaussianActionPolicy, rollout
from .gaussian_models import (DiagGaussian, GaussianMixture, jensen_lower_bound, log_prob,
                              lse_lower_bound, pseudo_gaussian)

logger = logging.getLogger("CFPI")

LOG_TAUS = (0.1, 0.5, 1.5)
OBJECTIVE_GAP = 1e-6
CONSTRAINT_TOL = 1e-8
REDUCTION_TOL = 1e-10
BOUND_TOL = 1e-10
MC_STANDARD_ERRORS = 4.0


@dataclass(frozen=True, eq=False)
class OracleInstance:
    mixture: GaussianMixture
    grads: np.ndarray        # (N, d): one gradient per component mean
    grad: np.ndarray         # (d,): gradient at the pseudo-mean / single-Gaussian mean
    log_tau: float


def random_mixture(rng: np.random.Generator, dim: int, n_components: int,
                   var_range: Tuple[float, float] = (0.1, 10.0)) -> GaussianMixture:
    weights = rng.dirichlet(np.ones(n_components))
    weights = weights / weights.sum()
    means = 2.0 * rng.standard_normal((n_components, dim))
    var = rng.uniform(*var_range, size=(n_components, dim))
    return GaussianMixture(weights, means, var)


def random_instances(rng: np.random.Generator, count: int, dims: Tuple[int, int] = (1, 10),
                     components: Tuple[int, int] = (1, 8),
                     log_taus: Sequence[float] = LOG_TAUS) -> List[OracleInstance]:
    instances = []
    for _ in range(count):
        dim = int(rng.integers(dims[0], dims[1] + 1))
        n = int(rng.integers(components[0], components[1] + 1))
        mixture = random_mixture(rng, dim, n)
        instances.append(OracleInstance(
            mixture=mixture,
            grads=rng.standard_normal((n, dim)),
            grad=rng.standard_normal(dim),
            log_tau=float(rng.choice(log_taus)),
        ))
    return instances


# -- Lagrangian solvers -------------------------------------------------------

def solve_qclp(grad, centers, precisions, weights, budget: float) -> Optional[np.ndarray]:
    """
    maximize g'mu  s.t.  0.5 sum_j w_j ||mu - c_j||^2_{P_j} <= budget  (diagonal P_j).

    Returns None when even the unconstrained minimizer of the left side
    violates the budget.
    """
    grad = np.asarray(grad, dtype=np.float64)
    centers = np.atleast_2d(centers)
    precisions = np.atleast_2d(precisions)
    weights = np.atleast_1d(np.asarray(weights, dtype=np.float64))

    def constraint(mu):
        diff = mu - centers
        return 0.5 * float(weights @ np.sum(diff * diff * precisions, axis=1)) - budget

    total = weights @ precisions
    anchor = (weights @ (precisions * centers)) / total
    at_anchor = constraint(anchor)
    if at_anchor > 0:
        return None
    if at_anchor == 0 or not np.any(grad):
        return anchor

    def path(t):
        return anchor + t * grad / total

    upper = 1.0
    while constraint(path(upper)) < 0:
        upper *= 2.0
    t = brentq(lambda t: constraint(path(t)), 0.0, upper, xtol=1e-15 * upper,
               rtol=4 * np.finfo(float).eps, maxiter=500)
    return path(t)


def _neg_log_density(mean: np.ndarray, var: np.ndarray, at: np.ndarray) -> float:
    return -float(np.sum(norm.logpdf(at, loc=mean, scale=np.sqrt(var))))


def oracle_sg(gaussian: DiagGaussian, grad, log_tau: float) -> np.ndarray:
    """-log pi(mu) <= -log pi(mu_b) + log tau."""
    return solve_qclp(grad, gaussian.mean, 1.0 / gaussian.var, [1.0], log_tau)


def oracle_lse(mixture: GaussianMixture, grads: np.ndarray, log_tau: float
               ) -> Tuple[Optional[np.ndarray], float, Optional[int]]:
    """Per-component sub-problems under the shared delta, then argmax of g_i'mu_i."""
    peak_costs = np.array([
        -np.log(w) + _neg_log_density(m, v, m) if w > 0 else np.inf
        for w, m, v in zip(mixture.weights, mixture.means, mixture.vars)
    ])
    delta = float(np.min(peak_costs)) + log_tau
    best, best_value, best_index = None, -np.inf, None
    for i, (m, v, g) in enumerate(zip(mixture.means, mixture.vars, grads)):
        budget = delta - peak_costs[i]
        if not np.isfinite(budget) or budget < -1e-12:
            continue
        mu = solve_qclp(g, m, 1.0 / v, [1.0], max(budget, 0.0))
        if mu is not None and float(g @ mu) > best_value:
            best, best_value, best_index = mu, float(g @ mu), i
    return best, best_value, best_index


def oracle_jensen(mixture: GaussianMixture, grad, log_tau: float) -> Optional[np.ndarray]:
    """sum_i lambda_i (-log pi_i(mu)) <= sum_i lambda_i (-log pi_i(mu_i)) + log tau."""
    return solve_qclp(grad, mixture.means, 1.0 / mixture.vars, mixture.weights, log_tau)


# -- suites -------------------------------------------------------------------

@dataclass
class SuiteResult:
    name: str
    checked: int = 0
    failures: int = 0
    worst: float = 0.0
    examples: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def record(self, gap: float, tolerance: float, label: str = "") -> None:
        self.checked += 1
        self.worst = max(self.worst, float(gap))
        if not gap <= tolerance:
            self.failures += 1
            if len(self.examples) < 5:
                self.examples.append(f"{label} gap {gap:.3e} > {tolerance:.1e}")


@dataclass
class OracleReport:
    suites: List[SuiteResult]

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.suites)

    def suite(self, name: str) -> SuiteResult:
        return next(s for s in self.suites if s.name == name)

    def to_dict(self) -> Dict:
        return {"passed": self.passed, "suites": [asdict(s) for s in self.suites]}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{"suite": s.name, "checked": s.checked, "failures": s.failures,
                              "worst": s.worst} for s in self.suites])


def _relative_gap(value: float, reference: float) -> float:
    return abs(value - reference) / max(1.0, abs(reference))


def check_sg(instances: Sequence[OracleInstance]) -> Tuple[SuiteResult, SuiteResult]:
    """Objective gap against the Lagrangian solver, and activeness of the density constraint."""
    gaps, kkt = SuiteResult("sg_qclp"), SuiteResult("sg_kkt")
    for k, inst in enumerate(instances):
        gaussian = DiagGaussian(inst.mixture.means[0], inst.mixture.vars[0])
        action = improve_sg(gaussian, ActionGradient(inst.grad, gaussian.mean), inst.log_tau)
        reference = oracle_sg(gaussian, inst.grad, inst.log_tau)
        gaps.record(_relative_gap(float(inst.grad @ action), float(inst.grad @ reference)),
                    OBJECTIVE_GAP, f"instance {k}")
        delta = delta_sg(gaussian, inst.log_tau)
        kkt.record(abs(_neg_log_density(gaussian.mean, gaussian.var, action) - delta),
                   CONSTRAINT_TOL, f"instance {k}")
    return gaps, kkt


def check_lse(instances: Sequence[OracleInstance]) -> SuiteResult:
    result = SuiteResult("lse_qclp")
    for k, inst in enumerate(instances):
        mixture = inst.mixture
        grads = [ActionGradient(g, m) for g, m in zip(inst.grads, mixture.means)]
        candidate = improve_lse(mixture, grads, inst.log_tau)
        _, reference, _ = oracle_lse(mixture, inst.grads, inst.log_tau)
        result.record(_relative_gap(candidate.q_value, reference), OBJECTIVE_GAP, f"instance {k}")
        # feasibility of the returned action under the log-sum-exp bound
        violation = -lse_lower_bound(mixture, candidate.action) - delta_lse(mixture, inst.log_tau)
        result.record(max(violation, 0.0), CONSTRAINT_TOL, f"instance {k} feasibility")
    return result


def check_jensen(instances: Sequence[OracleInstance]) -> SuiteResult:
    result = SuiteResult("jensen_qclp")
    for k, inst in enumerate(instances):
        mixture = inst.mixture
        pseudo = pseudo_gaussian(mixture)
        candidate = improve_jensen(mixture, ActionGradient(inst.grad, pseudo.mean), inst.log_tau)
        reference = oracle_jensen(mixture, inst.grad, inst.log_tau)
        if reference is None:
            # empty feasible set: the operator falls back to the pseudo-mean
            result.record(float(np.max(np.abs(candidate.action - pseudo.mean))), REDUCTION_TOL,
                          f"instance {k} fallback")
            continue
        result.record(_relative_gap(candidate.q_value, float(inst.grad @ reference)),
                      OBJECTIVE_GAP, f"instance {k}")
        violation = -jensen_lower_bound(mixture, candidate.action) - delta_jensen(mixture, inst.log_tau)
        result.record(max(violation, 0.0), CONSTRAINT_TOL, f"instance {k} feasibility")
    return result


def check_bounds(rng: np.random.Generator, pairs: int, points_per_model: int = 10) -> SuiteResult:
    """Both lower bounds stay below the exact log-density; they coincide with it when N = 1."""
    result = SuiteResult("bounds")
    for k in range(max(1, pairs // points_per_model)):
        dim = int(rng.integers(1, 11))
        n = int(rng.integers(1, 9))
        mixture = random_mixture(rng, dim, n)
        points = mixture.means[rng.integers(n, size=points_per_model)] \
            + 3.0 * rng.standard_normal((points_per_model, dim))
        exact = np.atleast_1d(log_prob(mixture, points))
        for bound in (lse_lower_bound, jensen_lower_bound):
            excess = np.atleast_1d(bound(mixture, points)) - exact
            excess = np.abs(excess) if n == 1 else np.maximum(excess, 0.0)
            for value in excess / np.maximum(1.0, np.abs(exact)):
                result.record(float(value), BOUND_TOL, f"model {k} {bound.__name__}")
    return result


def check_reduction(rng: np.random.Generator, count: int) -> SuiteResult:
    """For one-component mixtures the three operators return the same action."""
    result = SuiteResult("reduction")
    for k in range(count):
        dim = int(rng.integers(1, 11))
        mixture = random_mixture(rng, dim, 1)
        gaussian = mixture.components[0]
        grad = rng.standard_normal(dim)
        log_tau = float(rng.choice(LOG_TAUS))
        sg = improve_sg(gaussian, ActionGradient(grad, gaussian.mean), log_tau)
        lse = improve_lse(mixture, [ActionGradient(grad, gaussian.mean)], log_tau).action
        jensen = improve_jensen(mixture, ActionGradient(grad, pseudo_gaussian(mixture).mean), log_tau).action
        gap = max(float(np.max(np.abs(lse - sg))), float(np.max(np.abs(jensen - sg))))
        result.record(gap, REDUCTION_TOL, f"instance {k}")
    return result


def check_chain_dp(rng: np.random.Generator, episodes: int = 400,
                   means: Sequence[float] = (-0.5, 0.0, 0.6), std: float = 0.4) -> SuiteResult:
    """Finite-horizon DP return against Monte-Carlo rollouts, in standard errors."""
    result = SuiteResult("chain_dp")
    env = ChainMdp()
    for mean in means:
        policy = GaussianActionPolicy(lambda s, m=mean: np.array([m]), std,
                                      env.action_low, env.action_high, f"gauss({mean})")
        exact = env.expected_return(policy)
        returns = rollout(env, policy, episodes, rng, threads=1).returns
        standard_error = max(float(returns.std(ddof=1)) / np.sqrt(episodes), 1e-12)
        result.record(abs(float(returns.mean()) - exact) / standard_error, MC_STANDARD_ERRORS,
                      f"policy {policy.name}")
    return result


def run_oracle_suite(instances: int = 1000, rng: Optional[np.random.Generator] = None,
                     bound_pairs: int = 10_000, reduction_instances: int = 500,
                     chain_episodes: int = 400) -> OracleReport:
    """Every check on freshly drawn random instances; deterministic for a given ``rng``."""
    rng = np.random.default_rng(0) if rng is None else rng
    drawn = random_instances(rng, instances)
    sg, kkt = check_sg(drawn)
    suites = [
        sg, kkt,
        check_lse(drawn),
        check_jensen(drawn),
        check_bounds(rng, bound_pairs),
        check_reduction(rng, reduction_instances),
        check_chain_dp(rng, chain_episodes),
    ]
    for suite in suites:
        level = logging.INFO if suite.passed else logging.ERROR
        logger.log(level, f"Oracle suite {suite.name}: {suite.checked} checks, "
                          f"{suite.failures} failures, worst {suite.worst:.3e}")
        for example in suite.examples:
            logger.debug(f"  {suite.name}: {example}")
    return OracleReport(suites)
