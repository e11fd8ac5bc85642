"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration/input problems exit 2,
numeric/runtime failures exit 3.
"""


class MiniasvError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(MiniasvError):
    """Array shapes are inconsistent with the requested operation."""


class ConfigError(MiniasvError):
    """A configuration value violates its invariants."""


class InputError(MiniasvError):
    """Input data (labels, trials, ids) is malformed or out of range."""


class NumericError(MiniasvError):
    """A computation produced or encountered non-finite / degenerate values."""


class DivergenceError(MiniasvError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")
