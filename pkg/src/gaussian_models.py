"""
Gaussian and Gaussian-Mixture action distributions.

All covariances are diagonal and stored as variance vectors, so every piece of
Sigma algebra below is elementwise. Mixture densities are only ever handled in
log space: per-component log-densities first, then log-sum-exp, max or a
weighted sum depending on which quantity is asked for.
"""
import json
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from .config import CONFIG
from .error import DataValidationError, DegenerateFilterError, ShapeError

LOG_2PI = np.log(2.0 * np.pi)
WEIGHT_TOLERANCE = 1e-12


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=np.float64)
    out.setflags(write=False)
    return out


def _floored_var(var: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(var)):
        raise DataValidationError("Variances must be finite")
    if np.any(var < 0):
        raise DataValidationError(f"Variances must be non-negative, got min {var.min()}")
    return np.maximum(var, CONFIG.var_floor)


@dataclass(frozen=True, eq=False)
class DiagGaussian:
    """
    Diagonal Gaussian N(mean, diag(var)) over action vectors.
    Variances are floored at CONFIG.var_floor on construction.
    """
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        var = np.atleast_1d(np.asarray(self.var, dtype=np.float64))
        if mean.ndim != 1 or var.shape != mean.shape:
            raise ShapeError(f"mean {mean.shape} and var {var.shape} must be equal-length vectors")
        if not np.all(np.isfinite(mean)):
            raise DataValidationError("Mean must be finite")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "var", _frozen(_floored_var(var)))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def log_det_2pi_cov(self) -> float:
        """log det(2 pi Sigma)."""
        return float(np.sum(LOG_2PI + np.log(self.var)))

    def as_mixture(self) -> "GaussianMixture":
        return GaussianMixture(np.ones(1), self.mean[None, :], self.var[None, :])


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """
    Mixture sum_i weights[i] N(means[i], diag(vars[i])).
    Stored as stacked arrays: weights (N,), means (N, d), vars (N, d).
    """
    weights: np.ndarray
    means: np.ndarray
    vars: np.ndarray

    def __post_init__(self):
        weights = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        means = np.asarray(self.means, dtype=np.float64)
        var = np.asarray(self.vars, dtype=np.float64)
        if means.ndim == 1:
            means = means[:, None]
        if var.ndim == 1:
            var = var[:, None]
        if weights.ndim != 1 or weights.shape[0] < 1:
            raise ShapeError("Mixture needs at least one component")
        if means.shape != var.shape or means.shape[0] != weights.shape[0]:
            raise ShapeError(
                f"weights {weights.shape}, means {means.shape} and vars {var.shape} do not agree"
            )
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise DataValidationError("Mixture weights must be finite and non-negative")
        if abs(weights.sum() - 1.0) > WEIGHT_TOLERANCE:
            raise DataValidationError(f"Mixture weights must sum to 1, got {weights.sum():.15f}")
        if not np.all(np.isfinite(means)):
            raise DataValidationError("Component means must be finite")
        object.__setattr__(self, "weights", _frozen(weights))
        object.__setattr__(self, "means", _frozen(means))
        object.__setattr__(self, "vars", _frozen(_floored_var(var)))

    @classmethod
    def from_components(cls, weights: Sequence[float], components: Sequence[DiagGaussian]) -> "GaussianMixture":
        if len(components) == 0:
            raise ShapeError("Mixture needs at least one component")
        dims = {c.dim for c in components}
        if len(dims) != 1:
            raise ShapeError(f"Components have differing dimensions {sorted(dims)}")
        return cls(weights, np.stack([c.mean for c in components]), np.stack([c.var for c in components]))

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def components(self) -> List[DiagGaussian]:
        return [DiagGaussian(m, v) for m, v in zip(self.means, self.vars)]

    @property
    def log_det_2pi_cov(self) -> np.ndarray:
        """Per-component log det(2 pi Sigma_i), shape (N,)."""
        return np.sum(LOG_2PI + np.log(self.vars), axis=-1)

    @property
    def log_weights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.weights)

    @property
    def mean(self) -> np.ndarray:
        """Mixture mean sum_i lambda_i mu_i."""
        return self.weights @ self.means


@dataclass(frozen=True, eq=False)
class PseudoGaussian:
    """The single Gaussian induced by Jensen's bound on a mixture (precision-weighted)."""
    mean: np.ndarray
    var: np.ndarray

    def as_gaussian(self) -> DiagGaussian:
        return DiagGaussian(self.mean, self.var)


@dataclass(frozen=True, eq=False)
class MixtureBatch:
    """Per-state mixtures for a batch of states: weights (B,N), means (B,N,d), vars (B,N,d)."""
    weights: np.ndarray
    means: np.ndarray
    vars: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        means = np.asarray(self.means, dtype=np.float64)
        var = np.maximum(np.asarray(self.vars, dtype=np.float64), CONFIG.var_floor)
        if weights.ndim != 2 or means.ndim != 3 or means.shape != var.shape \
                or means.shape[:2] != weights.shape:
            raise ShapeError(
                f"Batch shapes disagree: weights {weights.shape}, means {means.shape}, vars {var.shape}"
            )
        object.__setattr__(self, "weights", _frozen(weights))
        object.__setattr__(self, "means", _frozen(means))
        object.__setattr__(self, "vars", _frozen(var))

    def __len__(self) -> int:
        return self.weights.shape[0]

    def __getitem__(self, index: int) -> GaussianMixture:
        return GaussianMixture(self.weights[index], self.means[index], self.vars[index])

    @classmethod
    def from_mixtures(cls, mixtures: Sequence[GaussianMixture]) -> "MixtureBatch":
        return cls(np.stack([m.weights for m in mixtures]),
                   np.stack([m.means for m in mixtures]),
                   np.stack([m.vars for m in mixtures]))


Model = Union[DiagGaussian, GaussianMixture]


def _check_point(model: Model, a) -> np.ndarray:
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    if a.shape[-1] != model.dim:
        raise ShapeError(f"Action has dimension {a.shape[-1]}, model expects {model.dim}")
    return a


def component_log_probs(model: GaussianMixture, a) -> np.ndarray:
    """log N(a; mu_i, Sigma_i) for every component, shape (N,) (or (..., N) for batched a)."""
    a = _check_point(model, a)
    diff = a[..., None, :] - model.means
    return -0.5 * (model.log_det_2pi_cov + np.sum(diff * diff / model.vars, axis=-1))


def _scalar(value):
    value = np.asarray(value)
    return float(value) if value.ndim == 0 else value


def log_prob(model: Model, a):
    """
    Exact log-density; mixtures use max-shifted log-sum-exp.
    A single action gives a float, a stack of actions (K, d) gives (K,).
    """
    if isinstance(model, DiagGaussian):
        a = _check_point(model, a)
        diff = a - model.mean
        return _scalar(-0.5 * (model.log_det_2pi_cov + np.sum(diff * diff / model.var, axis=-1)))
    return _scalar(logsumexp(component_log_probs(model, a), b=model.weights, axis=-1))


def lse_lower_bound(model: GaussianMixture, a):
    """max_i [log lambda_i + log N(a; mu_i, Sigma_i)]; never above log_prob."""
    terms = model.log_weights + component_log_probs(model, a)
    return _scalar(np.max(terms, axis=-1))


def jensen_lower_bound(model: GaussianMixture, a):
    """sum_i lambda_i log N(a; mu_i, Sigma_i); equals log_prob when N == 1."""
    return _scalar(component_log_probs(model, a) @ model.weights)


def pseudo_gaussian(model: GaussianMixture) -> PseudoGaussian:
    """
    Precision-weighted Gaussian of a mixture:
    var = (sum_i lambda_i / var_i)^-1, mean = var * sum_i lambda_i mean_i / var_i.
    """
    precision = model.weights @ (1.0 / model.vars)
    var = 1.0 / precision
    mean = var * (model.weights @ (model.means / model.vars))
    return PseudoGaussian(_frozen(mean), _frozen(var))


def sample(model, rng: np.random.Generator, size: int = None) -> np.ndarray:
    """
    Draw from the distribution. Mixtures pick a component by weight, then
    sample it. Returns (d,) when size is None, otherwise (size, d).
    """
    if isinstance(model, PseudoGaussian):
        model = model.as_gaussian()
    n = 1 if size is None else int(size)
    if isinstance(model, DiagGaussian):
        draws = model.mean + np.sqrt(model.var) * rng.standard_normal((n, model.dim))
    else:
        idx = rng.choice(model.n_components, size=n, p=model.weights)
        draws = model.means[idx] + np.sqrt(model.vars[idx]) * rng.standard_normal((n, model.dim))
    return draws[0] if size is None else draws


def nontrivial_components(model: GaussianMixture, xi: float) -> List[Tuple[int, DiagGaussian]]:
    """Components with weight strictly above xi, in original order."""
    if not 0 <= xi < 1:
        raise DataValidationError(f"Threshold xi must lie in [0, 1), got {xi}")
    kept = [(i, DiagGaussian(model.means[i], model.vars[i]))
            for i in range(model.n_components) if model.weights[i] > xi]
    if not kept:
        raise DegenerateFilterError(
            f"No component has weight above {xi}; weights {np.round(model.weights, 6).tolist()}"
        )
    return kept


def as_mixture(model: Model) -> GaussianMixture:
    return model.as_mixture() if isinstance(model, DiagGaussian) else model


def to_json(model: Model) -> Dict:
    """{"d", "N", "weights", "means", "vars"}; single Gaussians serialize as N = 1."""
    mixture = as_mixture(model)
    return {
        "d": mixture.dim,
        "N": mixture.n_components,
        "weights": mixture.weights.tolist(),
        "means": mixture.means.tolist(),
        "vars": mixture.vars.tolist(),
    }


def from_json(document) -> Model:
    """Inverse of to_json; N = 1 documents come back as DiagGaussian."""
    if isinstance(document, str):
        document = json.loads(document)
    try:
        weights = np.asarray(document["weights"], dtype=np.float64)
        means = np.asarray(document["means"], dtype=np.float64).reshape(document["N"], document["d"])
        var = np.asarray(document["vars"], dtype=np.float64).reshape(document["N"], document["d"])
    except (KeyError, ValueError, TypeError) as e:
        raise DataValidationError(f"Malformed Gaussian model document: {e}", cause=e) from e
    if document["N"] == 1:
        return DiagGaussian(means[0], var[0])
    return GaussianMixture(weights, means, var)
