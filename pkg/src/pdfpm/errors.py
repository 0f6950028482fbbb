"""Exception types raised by the solver and its helpers."""

import numpy as np


class PDFPMError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PDFPMError, ValueError):
    """Invalid problem or solver configuration."""


class EvaluationError(PDFPMError, ArithmeticError):
    """An oracle returned a non-finite value."""

    def __init__(self, message, index=None, x=None):
        super().__init__(message)
        self.index = index
        self.x = None if x is None else np.array(x, dtype=float)


class SubproblemFailure(PDFPMError, RuntimeError):
    """The interior-point subproblem solver hit an iteration cap."""

    def __init__(self, message, last_iterate=None, residual=np.nan):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class GenerationError(PDFPMError, RuntimeError):
    """Could not draw a nonsingular uncertainty matrix."""


class UsageError(PDFPMError, RuntimeError):
    """An operation was called on an object in the wrong state."""
