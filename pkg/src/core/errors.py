"""
Error hierarchy for dualflow

Every failure raised by the numerical modules derives from DualflowError, so the CLI
and the API can map them to exit codes / HTTP statuses in one place.
"""

from typing import Optional, Sequence


class DualflowError(Exception):
    """Base class for all dualflow errors"""


class DimensionError(DualflowError, ValueError):
    """Measures or fields of incompatible dimension"""


class NormalizationError(DualflowError, ValueError):
    """Input measure is not a probability measure"""


class SizeError(DualflowError, ValueError):
    """Problem exceeds a configured size cap (atom count, convolution budget)"""


class MassMismatchError(DualflowError, ValueError):
    """Two densities compared by a seminorm do not carry the same mass"""


class KernelEvalError(DualflowError):
    """Kernel or velocity evaluation produced NaN or was asked for a missing species"""


class ConfigError(DualflowError, ValueError):
    """Inconsistent solver or run configuration"""


class SolverError(DualflowError):
    """A solver detected an internal inconsistency (e.g. negative mass)"""


class UnsupportedError(DualflowError):
    """The requested estimate or mode is not available for these parameters"""


class ProbeError(DualflowError, ValueError):
    """A probe function is not Lipschitz (or not finite) on the box"""


class ScenarioError(DualflowError, ValueError):
    """Scenario preconditions do not hold"""


class NonContractionError(DualflowError):
    """Picard iteration did not reach the tolerance"""

    def __init__(self, message: str, distances: Sequence[float] = (), ratios: Sequence[float] = ()):
        super().__init__(message)
        self.distances = list(distances)
        self.ratios = list(ratios)


class BallEscapeError(DualflowError):
    """A Picard iterate left the first-moment ball Q(R)"""

    def __init__(self, message: str, radius: float, moments: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.radius = radius
        self.moments = list(moments or [])
