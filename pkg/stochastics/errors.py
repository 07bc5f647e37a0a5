"""
Error Types
Exceptions raised by the samplers, estimators and limit-law assemblers
"""


class DomainError(ValueError):
    """Parameter outside its admissible range, or mismatched grids."""


class UnidentifiedError(ValueError):
    """Estimator objective is constant in beta (no usable regressor)."""


class RejectedDrawError(ArithmeticError):
    """Limit draw with a degenerate denominator; the caller resamples."""

    def __init__(self, message: str, value: float = 0.0):
        super().__init__(message)
        self.value = value


class NumericalError(RuntimeError):
    """Numerical failure: covariance not PSD, factorization too large, ..."""
