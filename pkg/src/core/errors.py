"""
Exception hierarchy for the editing engine.

Library code raises these; only the command-line entry point turns them
into exit codes (usage 1, numerical 2, I/O 3).
"""

from typing import Any, Dict, Optional


class LoreError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(LoreError, ValueError):
    """Tensor extents do not agree."""


class NumericalError(LoreError, ArithmeticError):
    """
    A computation produced NaN or Inf.

    Attributes:
        diagnostics (Dict[str, Any]): Context for the failure (op, step, counts).
    """

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics: Dict[str, Any] = diagnostics or {}


class TapeError(LoreError, RuntimeError):
    """Misuse of the autodiff tape (non-scalar root, double backward)."""


class ConfigError(LoreError, ValueError):
    """Invalid configuration value."""


class ScheduleMismatchError(ConfigError):
    """A value cache was recorded under a different schedule."""


class FormatError(LoreError, ValueError):
    """Malformed file: PPM image, tensor blob or checkpoint."""


class SuiteError(LoreError, ValueError):
    """A benchmark suite request cannot be satisfied."""


class OracleError(LoreError, RuntimeError):
    """The oracle classifier is untrained or failed its accuracy gate."""
