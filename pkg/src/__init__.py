"""
CFPI package initialization.
"""

__version__ = '0.1.0'

from .error import (
    CFPIError,
    ConfigurationError,
    UsageError,
    DataError,
    DataLoadError,
    DatasetFormatError,
    DatasetTruncatedError,
    DimensionMismatchError,
    DataValidationError,
    ShapeError,
    NumericalError,
    TrustRegionError,
    NonFiniteGradientError,
    DegenerateFilterError,
    DivergenceError
)

from .config import CONFIG, ConfigurationManager, OneStepConfig, IterativeConfig, MultiStepConfig
from .logger import LOGGER
from .gaussian_models import DiagGaussian, GaussianMixture, log_prob, lse_lower_bound, jensen_lower_bound
from .cfpi_ops import (
    ActionGradient,
    improve_sg,
    improve_lse,
    improve_jensen,
    improve_mg,
    improve_det,
    easy_bcq,
    mode_select
)
from .offline_rl import ImprovedPolicy, one_step, iterate, multi_step
from .cli import cli_main

__all__ = [
    'CFPIError',
    'ConfigurationError',
    'UsageError',
    'DataError',
    'DataLoadError',
    'DatasetFormatError',
    'DatasetTruncatedError',
    'DimensionMismatchError',
    'DataValidationError',
    'ShapeError',
    'NumericalError',
    'TrustRegionError',
    'NonFiniteGradientError',
    'DegenerateFilterError',
    'DivergenceError',
    'CONFIG',
    'ConfigurationManager',
    'OneStepConfig',
    'IterativeConfig',
    'MultiStepConfig',
    'LOGGER',
    'DiagGaussian',
    'GaussianMixture',
    'log_prob',
    'lse_lower_bound',
    'jensen_lower_bound',
    'ActionGradient',
    'improve_sg',
    'improve_lse',
    'improve_jensen',
    'improve_mg',
    'improve_det',
    'easy_bcq',
    'mode_select',
    'ImprovedPolicy',
    'one_step',
    'iterate',
    'multi_step',
    'cli_main'
]
