"""
Closed-form policy improvement operators.

Each operator maps a behavior model, critic information and a trust-region
size to one improved action per state. The single-Gaussian rule, the two
mixture relaxations (log-sum-exp and Jensen) and their selector share the
same shift kernel

    anchor + kappa * Sigma g / ||g||_Sigma,      ||g||_Sigma = sqrt(g' Sigma g)

which returns the anchor unchanged when ||g||_Sigma < CONFIG.grad_eps.
The kernels broadcast over leading batch axes so the per-state operators and
``improve_mg_batch`` run the same arithmetic. Actions are never clipped here.

Critics are any object with ``value(states, actions) -> (B,)`` and
``query(states, actions) -> CriticQuery``.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .config import CONFIG
from .error import (ConfigurationError, DataValidationError, NonFiniteGradientError, ShapeError,
                    TrustRegionError)
from .gaussian_models import (DiagGaussian, GaussianMixture, MixtureBatch, as_mixture,
                              nontrivial_components, pseudo_gaussian, sample)

logger = logging.getLogger("CFPI")

FEASIBILITY_TOL = 1e-12

Evaluate = Callable[[np.ndarray], np.ndarray]


class CandidateSource(str, Enum):
    SG = "sg"
    LSE = "lse"
    JENSEN = "jensen"
    MEAN = "mean"
    SAMPLE = "sample"
    DET = "det"


@dataclass(frozen=True)
class TrustRegion:
    """log tau and the per-operator delta derived from it."""
    log_tau: float
    delta: float

    def __post_init__(self):
        _check_log_tau(self.log_tau)
        if not np.isfinite(self.delta):
            raise TrustRegionError(f"delta must be finite, got {self.delta}")


@dataclass(frozen=True, eq=False)
class ActionGradient:
    """dQ/da evaluated at ``anchor``."""
    grad: np.ndarray
    anchor: np.ndarray

    def __post_init__(self):
        grad = np.atleast_1d(np.asarray(self.grad, dtype=np.float64))
        anchor = np.atleast_1d(np.asarray(self.anchor, dtype=np.float64))
        if grad.shape != anchor.shape:
            raise ShapeError(f"Gradient {grad.shape} and anchor {anchor.shape} differ in shape")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(f"Action gradient is not finite at anchor {anchor.tolist()}")
        object.__setattr__(self, "grad", grad)
        object.__setattr__(self, "anchor", anchor)


@dataclass(frozen=True, eq=False)
class CandidateAction:
    action: np.ndarray
    source: CandidateSource
    q_value: float
    index: Optional[int] = None


def _check_log_tau(log_tau: float) -> None:
    if not np.isfinite(log_tau) or log_tau < 0:
        raise TrustRegionError(f"log_tau must be a finite value >= 0, got {log_tau}")


def _check_gradients(grads: np.ndarray) -> None:
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradientError("Action gradient contains NaN or infinity")


def _check_anchor(gradient: ActionGradient, expected: np.ndarray, where: str) -> None:
    if gradient.anchor.shape != expected.shape or not np.allclose(gradient.anchor, expected, rtol=1e-9, atol=1e-12):
        raise DataValidationError(
            f"Gradient taken at {gradient.anchor.tolist()}, expected the {where} {expected.tolist()}"
        )


def shift(anchor: np.ndarray, var: np.ndarray, grad: np.ndarray, kappa) -> np.ndarray:
    """anchor + kappa Sigma g / ||g||_Sigma over the last axis; anchor where the norm vanishes."""
    norm = np.sqrt(np.sum(grad * grad * var, axis=-1))
    moving = norm >= CONFIG.grad_eps
    direction = var * grad / np.where(moving, norm, 1.0)[..., None]
    step = np.where(moving, kappa, 0.0)[..., None] * direction
    return anchor + step


def _log_det_2pi(var: np.ndarray) -> np.ndarray:
    return np.sum(np.log(2.0 * np.pi) + np.log(var), axis=-1)


def _log_weights(weights: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(weights)


def delta_sg(model: DiagGaussian, log_tau: float) -> float:
    """0.5 log det(2 pi Sigma) + log tau."""
    _check_log_tau(log_tau)
    return 0.5 * model.log_det_2pi_cov + log_tau


def improve_sg(pi_b: DiagGaussian, grad_at_mean: ActionGradient, log_tau: float) -> np.ndarray:
    """mu + sqrt(2 log tau) Sigma g / ||g||_Sigma with g taken at the mean."""
    _check_log_tau(log_tau)
    if grad_at_mean.grad.shape[0] != pi_b.dim:
        raise ShapeError(f"Gradient has dimension {grad_at_mean.grad.shape[0]}, policy {pi_b.dim}")
    _check_anchor(grad_at_mean, pi_b.mean, "mean")
    return shift(pi_b.mean, pi_b.var, grad_at_mean.grad, np.sqrt(2.0 * log_tau))


# -- log-sum-exp relaxation --------------------------------------------------

def _lse_delta(weights: np.ndarray, var: np.ndarray, log_tau: float) -> np.ndarray:
    return np.min(0.5 * _log_det_2pi(var) - _log_weights(weights), axis=-1) + log_tau


def _lse_kappa(weights: np.ndarray, var: np.ndarray, log_tau: float) -> Tuple[np.ndarray, np.ndarray]:
    """Per-component kappa (..., N) and the feasibility mask kappa^2 >= 0."""
    delta = _lse_delta(weights, var, log_tau)
    kappa_sq = 2.0 * (delta[..., None] + _log_weights(weights)) - _log_det_2pi(var)
    feasible = (weights > 0) & (kappa_sq >= -FEASIBILITY_TOL)
    return np.sqrt(np.where(feasible, np.maximum(kappa_sq, 0.0), 0.0)), feasible


def delta_lse(model: GaussianMixture, log_tau: float) -> float:
    """min_i {0.5 log det(2 pi Sigma_i) - log lambda_i} + log tau."""
    _check_log_tau(log_tau)
    model = as_mixture(model)
    return float(_lse_delta(model.weights, model.vars, log_tau))


def lse_candidates(model: GaussianMixture, grads: np.ndarray, log_tau: float) -> Tuple[np.ndarray, np.ndarray]:
    """Per-component shifted means (N, d) and which of them are feasible."""
    _check_log_tau(log_tau)
    kappa, feasible = _lse_kappa(model.weights, model.vars, log_tau)
    return shift(model.means, model.vars, grads, kappa), feasible


def improve_lse(model: GaussianMixture, grads: Sequence[ActionGradient], log_tau: float,
                evaluate: Optional[Evaluate] = None) -> CandidateAction:
    """
    Best feasible component solution. ``evaluate`` scores the (N, d) candidate
    stack; by default each candidate is scored by its own linearized
    objective mu_i' g_i. Ties go to the lowest component index.
    """
    model = as_mixture(model)
    if len(grads) != model.n_components:
        raise ShapeError(f"Expected {model.n_components} gradients, got {len(grads)}")
    for gradient, mean in zip(grads, model.means):
        _check_anchor(gradient, mean, "component mean")
    g = np.stack([item.grad for item in grads])
    candidates, feasible = lse_candidates(model, g, log_tau)
    if not np.any(feasible):
        raise TrustRegionError("Every mixture component is infeasible for this trust region")
    scores = np.sum(candidates * g, axis=-1) if evaluate is None else np.asarray(evaluate(candidates), dtype=np.float64)
    scores = np.where(feasible, scores, -np.inf)
    best = int(np.argmax(scores))
    return CandidateAction(candidates[best], CandidateSource.LSE, float(scores[best]), best)


# -- Jensen relaxation --------------------------------------------------------

def _jensen_parameters(weights, means, var, log_tau) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pseudo-Gaussian mean/var and the clamped kappa, broadcast over leading axes."""
    precision = np.sum(weights[..., None] / var, axis=-2)
    pseudo_var = 1.0 / precision
    pseudo_mean = pseudo_var * np.sum(weights[..., None] * means / var, axis=-2)
    gap = pseudo_mean[..., None, :] - means
    spread = np.sum(weights * np.sum(gap * gap / var, axis=-1), axis=-1)
    kappa = np.sqrt(np.maximum(2.0 * log_tau - spread, 0.0))
    return pseudo_mean, pseudo_var, kappa


def delta_jensen(model: GaussianMixture, log_tau: float) -> float:
    """log tau + 0.5 sum_i lambda_i log det(2 pi Sigma_i)."""
    _check_log_tau(log_tau)
    model = as_mixture(model)
    return float(log_tau + 0.5 * model.weights @ model.log_det_2pi_cov)


def jensen_kappa(model: GaussianMixture, log_tau: float) -> float:
    _check_log_tau(log_tau)
    model = as_mixture(model)
    return float(_jensen_parameters(model.weights, model.means, model.vars, log_tau)[2])


def improve_jensen(model: GaussianMixture, grad_at_pseudo_mean: ActionGradient, log_tau: float,
                   evaluate: Optional[Evaluate] = None) -> CandidateAction:
    """
    Shift the precision-weighted pseudo-mean by kappa along the pseudo-covariance
    direction. kappa^2 = 2 log tau - sum_i lambda_i ||mu_bar - mu_i||^2_{Sigma_i^-1},
    clamped at 0.
    """
    _check_log_tau(log_tau)
    model = as_mixture(model)
    mean, var, kappa = _jensen_parameters(model.weights, model.means, model.vars, log_tau)
    _check_anchor(grad_at_pseudo_mean, mean, "pseudo-mean")
    action = shift(mean, var, grad_at_pseudo_mean.grad, kappa)
    if evaluate is None:
        score = float(action @ grad_at_pseudo_mean.grad)
    else:
        score = float(np.asarray(evaluate(action[None, :]), dtype=np.float64)[0])
    return CandidateAction(action, CandidateSource.JENSEN, score)


# -- combined selector --------------------------------------------------------

def _mg_batch(batch: MixtureBatch, critic, states: np.ndarray, log_tau: float
              ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Both candidates for every state. Returns (actions (B, d), picked-LSE mask,
    Q of the pick, LSE component index). Rows where both candidates fail raise.
    """
    _check_log_tau(log_tau)
    n_states, n_comp, dim = batch.means.shape
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if states.shape[0] != n_states:
        raise ShapeError(f"{states.shape[0]} states for {n_states} mixtures")
    rep_states = np.repeat(states, n_comp, axis=0)

    anchor_query = critic.query(rep_states, batch.means.reshape(-1, dim))
    grads = anchor_query.action_gradient.reshape(n_states, n_comp, dim)
    grads_ok = np.all(np.isfinite(grads), axis=-1)
    kappa, feasible = _lse_kappa(batch.weights, batch.vars, log_tau)
    feasible &= grads_ok
    lse = shift(batch.means, batch.vars, np.where(grads_ok[..., None], grads, 0.0), kappa)
    lse_q = critic.value(rep_states, lse.reshape(-1, dim)).reshape(n_states, n_comp)
    lse_q = np.where(feasible, lse_q, -np.inf)
    lse_index = np.argmax(lse_q, axis=1)
    rows = np.arange(n_states)
    lse_best = lse[rows, lse_index]
    lse_best_q = lse_q[rows, lse_index]

    pseudo_mean, pseudo_var, jensen_k = _jensen_parameters(batch.weights, batch.means, batch.vars, log_tau)
    pseudo_grad = critic.query(states, pseudo_mean).action_gradient
    jensen_ok = np.all(np.isfinite(pseudo_grad), axis=-1)
    jensen = shift(pseudo_mean, pseudo_var, np.where(jensen_ok[:, None], pseudo_grad, 0.0), jensen_k)
    jensen_q = np.where(jensen_ok, critic.value(states, jensen), -np.inf)

    failed = ~np.any(feasible, axis=1) & ~jensen_ok
    if np.any(failed):
        raise NonFiniteGradientError(f"Both mixture candidates failed for states {np.flatnonzero(failed).tolist()}")
    if not np.all(np.any(feasible, axis=1)):
        logger.debug("Log-sum-exp candidate unavailable for some states; using Jensen")
    take_lse = lse_best_q >= jensen_q
    actions = np.where(take_lse[:, None], lse_best, jensen)
    return actions, take_lse, np.where(take_lse, lse_best_q, jensen_q), lse_index


def improve_mg_batch(mixtures: MixtureBatch, critic, states, log_tau: float) -> np.ndarray:
    """Row-wise improve_mg over a batch of states; (B, d)."""
    return _mg_batch(mixtures, critic, states, log_tau)[0]


def select_mg(model: GaussianMixture, critic, state, log_tau: float) -> CandidateAction:
    """The higher-valued of the LSE and Jensen candidates; ties go to LSE."""
    mixture = as_mixture(model)
    batch = MixtureBatch.from_mixtures([mixture])
    actions, take_lse, q, index = _mg_batch(batch, critic, np.atleast_2d(state), log_tau)
    if take_lse[0]:
        return CandidateAction(actions[0], CandidateSource.LSE, float(q[0]), int(index[0]))
    return CandidateAction(actions[0], CandidateSource.JENSEN, float(q[0]))


def improve_mg(model: GaussianMixture, critic, state, log_tau: float) -> np.ndarray:
    return select_mg(model, critic, state, log_tau).action


# -- deterministic and sampling operators -------------------------------------

def improve_det(mu_b, grad: ActionGradient, delta: float) -> np.ndarray:
    """mu_b + sqrt(2 delta) g / ||g||: the Euclidean-ball solution."""
    if not np.isfinite(delta) or delta < 0:
        raise TrustRegionError(f"delta must be a finite value >= 0, got {delta}")
    mu_b = np.atleast_1d(np.asarray(mu_b, dtype=np.float64))
    return shift(mu_b, np.ones_like(mu_b), grad.grad, np.sqrt(2.0 * delta))


def _values(critic, state, actions: np.ndarray) -> np.ndarray:
    return critic.value(np.atleast_2d(state), np.atleast_2d(actions))


def _best_sample(model, critic, state, count: int, rng: np.random.Generator) -> CandidateAction:
    if count < 1:
        raise ShapeError(f"Need at least one candidate sample, got {count}")
    samples = np.atleast_2d(sample(model, rng, size=count))
    values = _values(critic, state, samples)
    best = int(np.argmax(values))
    return CandidateAction(samples[best], CandidateSource.SAMPLE, float(values[best]), best)


def easy_bcq(model, critic, state, n_bcq: int, rng: np.random.Generator) -> np.ndarray:
    """argmax of Q over n_bcq actions drawn from the behavior model."""
    return _best_sample(model, critic, state, n_bcq, rng).action


def improve_det_stochastic(model, critic, state, delta: float, n_samples: int,
                           rng: np.random.Generator) -> np.ndarray:
    """improve_det anchored at the best of n_samples behavior draws."""
    anchor = _best_sample(model, critic, state, n_samples, rng).action
    query = critic.query(np.atleast_2d(state), anchor[None, :])
    return improve_det(anchor, ActionGradient(query.action_gradient[0], anchor), delta)


def mode_select(model: GaussianMixture, critic, state, xi: float) -> np.ndarray:
    """Highest-valued mean among components with weight above xi."""
    return select_mode(model, critic, state, xi).action


def select_mode(model: GaussianMixture, critic, state, xi: float) -> CandidateAction:
    kept = nontrivial_components(as_mixture(model), xi)
    means = np.stack([component.mean for _, component in kept])
    values = _values(critic, state, means)
    best = int(np.argmax(values))
    return CandidateAction(means[best], CandidateSource.MEAN, float(values[best]), kept[best][0])


def behavior_mean(model) -> np.ndarray:
    """sum_i lambda_i mu_i."""
    return as_mixture(model).mean


def gradients_at(critic, state, anchors: np.ndarray) -> List[ActionGradient]:
    """One ActionGradient per anchor row, all for the same state."""
    anchors = np.atleast_2d(anchors)
    query = critic.query(np.atleast_2d(state), anchors)
    _check_gradients(query.action_gradient)
    return [ActionGradient(g, a) for g, a in zip(query.action_gradient, anchors)]


def improve_with_critic(operator: str, model, critic, state, log_tau: float) -> np.ndarray:
    """Gradient-querying wrappers for the single-model operators (sg, lse, jensen)."""
    if operator == "sg":
        gaussian = model if isinstance(model, DiagGaussian) else _single(model)
        return improve_sg(gaussian, gradients_at(critic, state, gaussian.mean)[0], log_tau)
    mixture = as_mixture(model)
    evaluate = lambda actions: _values(critic, state, actions)
    if operator == "lse":
        return improve_lse(mixture, gradients_at(critic, state, mixture.means), log_tau, evaluate).action
    if operator == "jensen":
        pseudo = pseudo_gaussian(mixture)
        return improve_jensen(mixture, gradients_at(critic, state, pseudo.mean)[0], log_tau, evaluate).action
    raise ShapeError(f"improve_with_critic does not handle operator {operator!r}")


def _single(model: GaussianMixture) -> DiagGaussian:
    if model.n_components != 1:
        raise ConfigurationError(f"The single-Gaussian operator needs one component, got {model.n_components}")
    return model.components[0]
