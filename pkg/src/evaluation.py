"""
Aggregate statistics over task x seed score matrices: IQM, median, mean,
optimality gap, stratified percentile-bootstrap intervals and performance
profiles.

Statistics reduce the last two axes of a (..., tasks, seeds) array, so the
bootstrap evaluates all resamples in one call.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import CONFIG
from .error import DataLoadError, DataValidationError

logger = logging.getLogger("CFPI")

Statistic = Callable[[np.ndarray], np.ndarray]

AGGREGATE_COLUMNS = ["metric", "point", "ci_low", "ci_high"]
PROFILE_COLUMNS = ["threshold", "fraction", "band_low", "band_high"]
MATRIX_COLUMNS = ["task", "seed", "score"]


class RunMatrix:
    """Normalized scores indexed by task (rows) and seed (columns)."""

    def __init__(self, frame: pd.DataFrame):
        if frame.empty:
            raise DataValidationError("Score matrix is empty")
        if frame.isna().any().any():
            missing = int(frame.isna().sum().sum())
            raise DataValidationError(f"Score matrix is not rectangular: {missing} missing runs")
        self.frame = frame.astype(np.float64)

    @classmethod
    def from_records(cls, records: pd.DataFrame) -> "RunMatrix":
        """Long (task, seed, score) rows; duplicate (task, seed) pairs keep the last score."""
        missing = set(MATRIX_COLUMNS) - set(records.columns)
        if missing:
            raise DataValidationError(f"Score records lack columns {sorted(missing)}")
        deduplicated = records.drop_duplicates(subset=["task", "seed"], keep="last")
        return cls(deduplicated.pivot(index="task", columns="seed", values="score").sort_index())

    @classmethod
    def from_array(cls, scores, tasks: Optional[Sequence[str]] = None) -> "RunMatrix":
        scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
        tasks = list(tasks) if tasks is not None else [f"task_{i}" for i in range(scores.shape[0])]
        return cls(pd.DataFrame(scores, index=tasks))

    @classmethod
    def read_csv(cls, path) -> "RunMatrix":
        try:
            records = pd.read_csv(path)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise DataLoadError(f"Cannot read score matrix {path}", cause=e) from e
        return cls.from_records(records)

    @property
    def scores(self) -> np.ndarray:
        return self.frame.to_numpy()

    @property
    def tasks(self) -> List[str]:
        return [str(t) for t in self.frame.index]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.scores.shape


def append_score(path, task: str, seed: int, score: float) -> pd.DataFrame:
    """Add one (task, seed, score) record to a long-format CSV, creating it when absent."""
    path = Path(path)
    row = pd.DataFrame([{"task": task, "seed": int(seed), "score": float(score)}], columns=MATRIX_COLUMNS)
    if path.exists():
        try:
            records = pd.concat([pd.read_csv(path), row], ignore_index=True)
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise DataLoadError(f"Cannot extend score file {path}", cause=e) from e
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        records = row
    records.to_csv(path, index=False, float_format="%.17g")
    return records


# -- point statistics ---------------------------------------------------------

def _flat(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    return scores.reshape(*scores.shape[:-2], -1) if scores.ndim >= 2 else scores


def _iqm_weights(n: int) -> np.ndarray:
    """Overlap of each rank cell [i, i+1) with the kept band [n/4, 3n/4]."""
    lower, upper = 0.25 * n, 0.75 * n
    starts = np.arange(n)
    return np.clip(np.minimum(starts + 1, upper) - np.maximum(starts, lower), 0.0, None)


def _iqm_sorted(values: np.ndarray) -> np.ndarray:
    n = values.shape[-1]
    return np.sort(values, axis=-1) @ _iqm_weights(n) / (0.5 * n)


def iqm(scores) -> float:
    """Mean of the middle half by value, with fractional weights at the cut points."""
    values = np.ravel(np.asarray(scores, dtype=np.float64))
    if values.size == 0:
        raise DataValidationError("IQM of an empty score list")
    return float(_iqm_sorted(values))


def iqm_statistic(scores: np.ndarray) -> np.ndarray:
    return _iqm_sorted(_flat(scores))


def median_statistic(scores: np.ndarray) -> np.ndarray:
    return np.median(_flat(scores), axis=-1)


def mean_statistic(scores: np.ndarray) -> np.ndarray:
    return np.mean(_flat(scores), axis=-1)


def optimality_gap_statistic(threshold: float) -> Statistic:
    def statistic(scores: np.ndarray) -> np.ndarray:
        return np.mean(np.maximum(0.0, threshold - _flat(scores)), axis=-1)
    return statistic


def optimality_gap(matrix, threshold: Optional[float] = None) -> float:
    """Mean over runs of max(0, threshold - score)."""
    threshold = CONFIG.optimality_threshold if threshold is None else threshold
    if threshold <= 0:
        raise DataValidationError(f"Optimality threshold must be > 0, got {threshold}")
    scores = matrix.scores if isinstance(matrix, RunMatrix) else np.atleast_2d(matrix)
    return float(optimality_gap_statistic(threshold)(scores))


# -- bootstrap ----------------------------------------------------------------

def _resample(scores: np.ndarray, resamples: int, rng: np.random.Generator) -> np.ndarray:
    """(B, tasks, seeds): seeds redrawn with replacement inside each task."""
    n_tasks, n_seeds = scores.shape
    picks = rng.integers(0, n_seeds, size=(resamples, n_tasks, n_seeds))
    return scores[np.arange(n_tasks)[None, :, None], picks]


def _percentiles(level: float) -> Tuple[float, float]:
    if not 0 < level < 1:
        raise DataValidationError(f"Confidence level must lie in (0, 1), got {level}")
    return 50.0 * (1.0 - level), 50.0 * (1.0 + level)


def stratified_bootstrap_ci(matrix: RunMatrix, statistic: Statistic, resamples: Optional[int] = None,
                            level: Optional[float] = None,
                            rng: Optional[np.random.Generator] = None) -> Tuple[float, float]:
    """Percentile interval of ``statistic`` under per-task resampling of seeds."""
    resamples = CONFIG.bootstrap_resamples if resamples is None else resamples
    level = CONFIG.ci_level if level is None else level
    if resamples < 100:
        raise DataValidationError(f"Need at least 100 bootstrap resamples, got {resamples}")
    rng = np.random.default_rng(0) if rng is None else rng
    values = statistic(_resample(matrix.scores, resamples, rng))
    low, high = np.percentile(values, _percentiles(level))
    return float(low), float(high)


# -- performance profiles -----------------------------------------------------

@dataclass
class ProfileCurve:
    thresholds: np.ndarray
    fractions: np.ndarray
    band_low: Optional[np.ndarray] = None
    band_high: Optional[np.ndarray] = None

    def to_frame(self) -> pd.DataFrame:
        band_low = self.fractions if self.band_low is None else self.band_low
        band_high = self.fractions if self.band_high is None else self.band_high
        return pd.DataFrame({"threshold": self.thresholds, "fraction": self.fractions,
                             "band_low": band_low, "band_high": band_high}, columns=PROFILE_COLUMNS)


def _profile_values(scores: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """(..., K): mean over tasks of the per-task fraction of runs scoring >= eta."""
    hits = scores[..., None] >= thresholds
    return hits.mean(axis=-2).mean(axis=-2)


def _check_thresholds(thresholds) -> np.ndarray:
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if thresholds.ndim != 1 or thresholds.size == 0 or np.any(np.diff(thresholds) < 0):
        raise DataValidationError("Profile thresholds must be a non-empty ascending list")
    return thresholds


def performance_profile(matrix: RunMatrix, thresholds) -> ProfileCurve:
    """F(eta) = mean_task mean_seed 1[x >= eta]; non-increasing in eta."""
    thresholds = _check_thresholds(thresholds)
    return ProfileCurve(thresholds, _profile_values(matrix.scores, thresholds))


def profile_band(matrix: RunMatrix, thresholds, resamples: int, level: float,
                 rng: np.random.Generator) -> ProfileCurve:
    thresholds = _check_thresholds(thresholds)
    curve = performance_profile(matrix, thresholds)
    values = _profile_values(_resample(matrix.scores, resamples, rng), thresholds)
    low, high = np.percentile(values, _percentiles(level), axis=0)
    curve.band_low = np.minimum(low, curve.fractions)
    curve.band_high = np.maximum(high, curve.fractions)
    return curve


def default_thresholds(matrix: RunMatrix, count: int = 101) -> np.ndarray:
    scores = matrix.scores
    return np.linspace(min(0.0, scores.min()), max(CONFIG.optimality_threshold, scores.max()), count)


# -- report -------------------------------------------------------------------

@dataclass
class Interval:
    point: float
    low: float
    high: float


@dataclass
class AggregateReport:
    estimates: Dict[str, Interval]
    profile: ProfileCurve
    n_tasks: int = 0
    n_seeds: int = 0

    def to_frame(self) -> pd.DataFrame:
        rows = [{"metric": name, "point": e.point, "ci_low": e.low, "ci_high": e.high}
                for name, e in self.estimates.items()]
        return pd.DataFrame(rows, columns=AGGREGATE_COLUMNS)

    def write(self, out_dir) -> Tuple[Path, Path]:
        """aggregates.csv and profile.csv under ``out_dir``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        aggregates = out_dir / "aggregates.csv"
        profile = out_dir / "profile.csv"
        self.to_frame().to_csv(aggregates, index=False, float_format="%.17g")
        self.profile.to_frame().to_csv(profile, index=False, float_format="%.17g")
        logger.info(f"Report written to {aggregates} and {profile}")
        return aggregates, profile


def aggregate_report(matrix: RunMatrix, resamples: Optional[int] = None, level: Optional[float] = None,
                     rng: Optional[np.random.Generator] = None, thresholds=None,
                     gap_threshold: Optional[float] = None) -> AggregateReport:
    """Median, IQM, mean and optimality gap with stratified bootstrap intervals, plus a banded profile."""
    resamples = CONFIG.bootstrap_resamples if resamples is None else resamples
    level = CONFIG.ci_level if level is None else level
    gap_threshold = CONFIG.optimality_threshold if gap_threshold is None else gap_threshold
    rng = np.random.default_rng(0) if rng is None else rng
    statistics = {
        "median": median_statistic,
        "iqm": iqm_statistic,
        "mean": mean_statistic,
        "optimality_gap": optimality_gap_statistic(gap_threshold),
    }
    estimates = {}
    for name, statistic in statistics.items():
        point = float(statistic(matrix.scores))
        low, high = stratified_bootstrap_ci(matrix, statistic, resamples, level, rng)
        estimates[name] = Interval(point, min(low, point), max(high, point))
        logger.debug(f"{name}: {point:.4f} [{estimates[name].low:.4f}, {estimates[name].high:.4f}]")
    thresholds = default_thresholds(matrix) if thresholds is None else thresholds
    profile = profile_band(matrix, thresholds, resamples, level, rng)
    n_tasks, n_seeds = matrix.shape
    return AggregateReport(estimates, profile, n_tasks, n_seeds)
