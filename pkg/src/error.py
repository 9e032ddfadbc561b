#!/usr/bin/env python3
"""
Custom error definitions for the CFPI offline-RL toolkit.
"""

class CFPIError(Exception):
    """
    Base exception class for CFPI-specific errors.
    Optionally stores an underlying cause exception.
    """
    def __init__(self, message: str, cause: Exception = None) -> None:
        super().__init__(message)
        self.cause = cause

class ConfigurationError(CFPIError):
    """Raised when configuration loading or validation fails."""
    pass

class UsageError(CFPIError):
    """Raised for malformed command lines."""
    pass

class DataError(CFPIError):
    """Base class for data-related errors."""
    pass

class DataLoadError(DataError):
    """Raised when loading data or checkpoints from files fails."""
    pass

class DatasetFormatError(DataLoadError):
    """Raised when a dataset file does not follow the binary layout."""
    pass

class DatasetTruncatedError(DatasetFormatError):
    """Raised when a dataset payload ends before the header says it should."""
    pass

class DimensionMismatchError(DatasetFormatError):
    """Raised when header dimensions disagree with the payload."""
    pass

class DataValidationError(DataError):
    """Raised when data validation fails."""
    pass

class ShapeError(DataValidationError):
    """Raised when array or tensor shapes do not compose."""
    pass

class NumericalError(CFPIError):
    """Base class for numerical failures."""
    pass

class TrustRegionError(NumericalError):
    """Raised for invalid trust regions or when no sub-problem is feasible."""
    pass

class NonFiniteGradientError(NumericalError):
    """Raised when an action gradient contains NaN or infinity."""
    pass

class DegenerateFilterError(NumericalError):
    """Raised when no mixture component survives the weight threshold."""
    pass

class DivergenceError(NumericalError):
    """Raised when critic values leave the range the rewards allow."""
    pass
