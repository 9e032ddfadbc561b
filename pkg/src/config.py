#!/usr/bin/env python3
"""
Configuration module for the CFPI toolkit.
Provides default hyperparameters, loading of JSON configuration files and
the typed configurations consumed by the offline-RL algorithms.
"""

import json
import logging
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from .error import ConfigurationError

OPERATORS = ("sg", "mg", "lse", "jensen", "det", "ebcq", "mode_select", "bc")

# Global configuration object.
class Config:
    # Default configuration values
    data_dir = str(Path(__file__).parent.parent.resolve())  # Root directory of the project

    # Gaussian algebra
    var_floor = 1e-8
    grad_eps = 1e-12

    # Networks
    hidden_width = 64
    hidden_layers = 2
    n_components = 4
    policy_lr = 1e-4
    critic_lr = 3e-4
    bc_batch_size_mg = 256
    bc_batch_size_sg = 512
    critic_batch_size = 256
    bc_steps = 20000
    sarsa_steps = 20000

    # Critic
    n_quantiles = 8
    extraction_fractions = 32
    gamma = 0.99
    polyak_rate = 5e-3
    critic = "quantile"
    ensemble_size = 4
    validation_split = 0.95

    # Operators
    log_tau = 0.5
    xi = 0.05
    n_bcq_sg = 10
    n_bcq_mg = 5
    det_delta = 0.05
    det_samples = 10
    mode_select_at_zero = True

    # Iterative / multi-step
    smoothing_sigma = 0.1
    smoothing_clip = 0.3
    iterate_steps = 5000
    multi_step_eval_steps = 2000
    divergence_tolerance = 0.5
    log_interval = 500

    # Evaluation
    bootstrap_resamples = 2000
    ci_level = 0.95
    optimality_threshold = 100.0
    safe_margin_fraction = 0.05
    threads = int(os.environ.get("CFPI_THREADS", "1"))

    def as_dict(self) -> Dict[str, Any]:
        """Fully resolved configuration, class defaults overlaid with instance values."""
        resolved = {
            key: value for key, value in vars(Config).items()
            if not key.startswith("_") and not callable(value)
        }
        resolved.update(vars(self))
        return dict(sorted(resolved.items()))

    def copy(self) -> "Config":
        clone = Config()
        for key, value in vars(self).items():
            setattr(clone, key, value)
        return clone

# Use a simple instance as the global config
CONFIG = Config()

class ConfigurationManager:
    """
    Manages loading and updating configuration values from a JSON file.
    """
    def __init__(self, config_file: str, target: Optional[Config] = None) -> None:
        self.config_file = config_file
        self.target = CONFIG if target is None else target
        self.logger = logging.getLogger("CFPI")

    def load_config(self) -> Config:
        """
        Load configuration from the specified JSON file and update the target config.
        """
        try:
            with open(self.config_file, 'r') as f:
                config_data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            self.logger.error(f"Failed to load config file: {self.config_file} - {e}")
            raise ConfigurationError(f"Cannot read config file {self.config_file}", cause=e) from e

        if not isinstance(config_data, dict):
            raise ConfigurationError(f"Config file {self.config_file} must hold a JSON object")

        for key, value in config_data.items():
            if hasattr(self.target, key):
                current = getattr(self.target, key)
                if isinstance(current, bool) and not isinstance(value, bool):
                    raise ConfigurationError(f"Config parameter {key} expects a boolean, got {value!r}")
                if isinstance(current, (int, float)) and not isinstance(current, bool):
                    if isinstance(value, bool) or not isinstance(value, (int, float)):
                        raise ConfigurationError(f"Config parameter {key} expects a number, got {value!r}")
                    value = type(current)(value) if isinstance(current, float) else value
                setattr(self.target, key, value)
                self.logger.debug(f"Config parameter updated: {key} = {value}")
            else:
                setattr(self.target, key, value)
                self.logger.warning(f"New config parameter added: {key} = {value}")
        self.logger.info("Configuration successfully loaded.")
        return self.target


def _check_operator(operator: str) -> None:
    if operator not in OPERATORS:
        raise ConfigurationError(f"Unknown operator {operator!r}; expected one of {', '.join(OPERATORS)}")


@dataclass(frozen=True)
class OneStepConfig:
    """Settings for Algorithm-1 style one-step policy improvement."""
    operator: str = "mg"
    log_tau: float = 0.5
    xi: float = 0.05
    n_bcq: int = 5
    det_delta: float = 0.05
    det_samples: int = 10
    n_components: int = 4
    bc_steps: int = 20000
    sarsa_steps: int = 20000
    bc_batch_size: int = 256
    critic_batch_size: int = 256
    hidden_width: int = 64
    hidden_layers: int = 2
    n_quantiles: int = 8
    policy_lr: float = 1e-4
    critic_lr: float = 3e-4
    gamma: float = 0.99
    polyak_rate: float = 5e-3
    critic: str = "quantile"
    ensemble_size: int = 4
    action_low: Tuple[float, ...] = (-1.0,)
    action_high: Tuple[float, ...] = (1.0,)
    mode_select_at_zero: bool = True
    seed: int = 0

    def __post_init__(self):
        _check_operator(self.operator)
        if self.log_tau < 0:
            raise ConfigurationError(f"log_tau must be >= 0, got {self.log_tau}")
        if not 0 <= self.xi < 1:
            raise ConfigurationError(f"xi must lie in [0, 1), got {self.xi}")
        if self.det_delta < 0:
            raise ConfigurationError(f"det_delta must be >= 0, got {self.det_delta}")
        for name in ("n_bcq", "det_samples", "n_components", "bc_batch_size",
                     "critic_batch_size", "hidden_width", "n_quantiles", "ensemble_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.bc_steps < 0 or self.sarsa_steps < 0:
            raise ConfigurationError("Step counts cannot be negative")
        if self.critic not in ("quantile", "ensemble"):
            raise ConfigurationError(f"Unknown critic kind {self.critic!r}")
        if not 0 <= self.gamma < 1:
            raise ConfigurationError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0 < self.polyak_rate <= 1:
            raise ConfigurationError(f"polyak_rate must lie in (0, 1], got {self.polyak_rate}")

    def critic_settings(self) -> "CriticConfig":
        return CriticConfig(
            n_quantiles=self.n_quantiles, hidden_width=self.hidden_width,
            hidden_layers=self.hidden_layers, lr=self.critic_lr, gamma=self.gamma,
            polyak_rate=self.polyak_rate, batch_size=self.critic_batch_size,
            steps=self.sarsa_steps, ensemble_size=self.ensemble_size,
        )

    def policy_settings(self) -> "PolicyConfig":
        return PolicyConfig(
            n_components=self.n_components, hidden_width=self.hidden_width,
            hidden_layers=self.hidden_layers, lr=self.policy_lr,
            batch_size=self.bc_batch_size, steps=self.bc_steps,
        )

    @classmethod
    def from_config(cls, config: Config = CONFIG, **overrides) -> "OneStepConfig":
        n_components = overrides.get("n_components", config.n_components)
        values = dict(
            log_tau=config.log_tau, xi=config.xi,
            n_bcq=config.n_bcq_mg if n_components > 1 else config.n_bcq_sg,
            det_delta=config.det_delta, det_samples=config.det_samples,
            n_components=n_components, bc_steps=config.bc_steps, sarsa_steps=config.sarsa_steps,
            bc_batch_size=config.bc_batch_size_mg if n_components > 1 else config.bc_batch_size_sg,
            critic_batch_size=config.critic_batch_size, hidden_width=config.hidden_width,
            hidden_layers=config.hidden_layers, n_quantiles=config.n_quantiles,
            policy_lr=config.policy_lr, critic_lr=config.critic_lr, gamma=config.gamma,
            polyak_rate=config.polyak_rate, critic=config.critic, ensemble_size=config.ensemble_size,
            mode_select_at_zero=config.mode_select_at_zero,
        )
        values.update(overrides)
        return cls(**_known(cls, values))


@dataclass(frozen=True)
class IterativeConfig:
    """Settings for the iterative algorithm with target networks and policy smoothing."""
    total_steps: int = 5000
    smoothing_sigma: float = 0.1
    smoothing_clip: float = 0.3
    action_low: Tuple[float, ...] = (-1.0,)
    action_high: Tuple[float, ...] = (1.0,)
    polyak_rate: float = 5e-3
    gamma: float = 0.99
    batch_size: int = 256
    log_tau: float = 0.5
    hidden_width: int = 64
    hidden_layers: int = 2
    n_quantiles: int = 8
    critic_lr: float = 3e-4
    divergence_tolerance: float = 0.5
    log_interval: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.smoothing_clip <= 0:
            raise ConfigurationError(f"Noise clip c must be > 0, got {self.smoothing_clip}")
        if self.smoothing_sigma < 0:
            raise ConfigurationError(f"Noise scale sigma must be >= 0, got {self.smoothing_sigma}")
        if self.log_tau < 0:
            raise ConfigurationError(f"log_tau must be >= 0, got {self.log_tau}")
        if self.total_steps < 0 or self.batch_size < 1 or self.log_interval < 1:
            raise ConfigurationError("Step counts and batch size must be positive")
        if len(self.action_low) != len(self.action_high):
            raise ConfigurationError("Action bounds must have equal length")
        if not 0 <= self.gamma < 1:
            raise ConfigurationError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0 < self.polyak_rate <= 1:
            raise ConfigurationError(f"polyak_rate must lie in (0, 1], got {self.polyak_rate}")

    @classmethod
    def from_config(cls, config: Config = CONFIG, **overrides) -> "IterativeConfig":
        values = dict(
            total_steps=config.iterate_steps, smoothing_sigma=config.smoothing_sigma,
            smoothing_clip=config.smoothing_clip, polyak_rate=config.polyak_rate,
            gamma=config.gamma, batch_size=config.critic_batch_size, log_tau=config.log_tau,
            hidden_width=config.hidden_width, hidden_layers=config.hidden_layers,
            n_quantiles=config.n_quantiles, critic_lr=config.critic_lr,
            divergence_tolerance=config.divergence_tolerance, log_interval=config.log_interval,
        )
        values.update(overrides)
        return cls(**_known(cls, values))


@dataclass(frozen=True)
class MultiStepConfig:
    """Rounds of converged policy evaluation alternated with operator application."""
    rounds: int = 1
    eval_steps: int = 2000
    batch_size: int = 256
    critic_lr: float = 3e-4
    gamma: float = 0.99
    polyak_rate: float = 5e-3

    def __post_init__(self):
        if self.rounds < 0:
            raise ConfigurationError(f"rounds must be >= 0, got {self.rounds}")
        if self.eval_steps < 0 or self.batch_size < 1:
            raise ConfigurationError("eval_steps must be >= 0 and batch_size >= 1")

    @classmethod
    def from_config(cls, config: Config = CONFIG, **overrides) -> "MultiStepConfig":
        values = dict(eval_steps=config.multi_step_eval_steps, batch_size=config.critic_batch_size,
                      critic_lr=config.critic_lr, gamma=config.gamma, polyak_rate=config.polyak_rate)
        values.update(overrides)
        return cls(**_known(cls, values))


@dataclass(frozen=True)
class CriticConfig:
    """Architecture and optimisation settings shared by every critic kind."""
    n_quantiles: int = 8
    hidden_width: int = 64
    hidden_layers: int = 2
    lr: float = 3e-4
    gamma: float = 0.99
    polyak_rate: float = 5e-3
    batch_size: int = 256
    steps: int = 20000
    extraction_fractions: int = 32
    ensemble_size: int = 4
    log_interval: int = 500

    def __post_init__(self):
        for name in ("n_quantiles", "hidden_width", "batch_size", "extraction_fractions",
                     "ensemble_size", "log_interval"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.hidden_layers < 0 or self.steps < 0:
            raise ConfigurationError("hidden_layers and steps cannot be negative")
        if not 0 <= self.gamma < 1:
            raise ConfigurationError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0 < self.polyak_rate <= 1:
            raise ConfigurationError(f"polyak_rate must lie in (0, 1], got {self.polyak_rate}")

    @classmethod
    def from_config(cls, config: Config = CONFIG, **overrides) -> "CriticConfig":
        values = dict(
            n_quantiles=config.n_quantiles, hidden_width=config.hidden_width,
            hidden_layers=config.hidden_layers, lr=config.critic_lr, gamma=config.gamma,
            polyak_rate=config.polyak_rate, batch_size=config.critic_batch_size,
            steps=config.sarsa_steps, extraction_fractions=config.extraction_fractions,
            ensemble_size=config.ensemble_size, log_interval=config.log_interval,
        )
        values.update(overrides)
        return cls(**_known(cls, values))


@dataclass(frozen=True)
class PolicyConfig:
    """Behavior-cloning network and optimiser settings."""
    n_components: int = 4
    hidden_width: int = 64
    hidden_layers: int = 2
    lr: float = 1e-4
    batch_size: int = 256
    steps: int = 20000
    log_interval: int = 500

    def __post_init__(self):
        for name in ("n_components", "hidden_width", "batch_size", "log_interval"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.hidden_layers < 0 or self.steps < 0:
            raise ConfigurationError("hidden_layers and steps cannot be negative")

    @classmethod
    def from_config(cls, config: Config = CONFIG, **overrides) -> "PolicyConfig":
        n_components = overrides.get("n_components", config.n_components)
        values = dict(
            n_components=n_components, hidden_width=config.hidden_width,
            hidden_layers=config.hidden_layers, lr=config.policy_lr,
            batch_size=config.bc_batch_size_mg if n_components > 1 else config.bc_batch_size_sg,
            steps=config.bc_steps, log_interval=config.log_interval,
        )
        values.update(overrides)
        return cls(**_known(cls, values))


def _known(cls, values: Dict[str, Any]) -> Dict[str, Any]:
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigurationError(f"Unknown {cls.__name__} fields: {', '.join(sorted(unknown))}")
    return values
