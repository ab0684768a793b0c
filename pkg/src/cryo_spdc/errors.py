"""Exception hierarchy shared by every toolkit module.

The command-line entry point catches ``ToolkitError`` and prints the message
verbatim, so messages should read well on their own.
"""

from typing import Any, Optional, Tuple


class ToolkitError(Exception):
    """Base class for all errors raised by cryo_spdc"""


class ConfigError(ToolkitError):
    """A configuration file is missing, malformed or inconsistent"""


class ArgumentError(ToolkitError, ValueError):
    """An argument is non-finite, out of range or otherwise invalid"""


class DispersionDomainError(ArgumentError):
    """A wavelength falls outside a dispersion model's validity window"""

    def __init__(self, message: str, window: Tuple[float, float]):
        super().__init__(message)
        self.window = window


class DataError(ToolkitError, ValueError):
    """Input data violates an invariant (e.g. unsorted time tags)"""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class NoPhasematchError(ToolkitError):
    """No sign change of the phase mismatch inside the scanned window"""

    def __init__(self, message: str, bracket: Tuple[float, float]):
        super().__init__(message)
        self.bracket = bracket


class NotPhasematchableError(ToolkitError):
    """The grating cannot supply the momentum required with the configured sign"""


class SolverError(ToolkitError, RuntimeError):
    """The root solver converged to a point that misses the residual tolerance"""


class FitError(ToolkitError, RuntimeError):
    """A fit did not converge or its input cannot be fitted"""

    def __init__(self, message: str, best: Any = None):
        super().__init__(message)
        self.best = best


class InsensitiveFitError(FitError):
    """The objective does not vary over the searched parameter range"""


class UndefinedMetricError(ToolkitError, ValueError):
    """A source metric is undefined because a denominator rate is zero"""
