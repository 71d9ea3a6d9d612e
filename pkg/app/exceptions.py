"""Error hierarchy for the navigation services."""
from typing import Any, Dict, Optional


class NavigationError(Exception):
    """Base class for every error raised by the estimation services."""


# ===== GEOMETRY ERRORS =====
class PolarSingularity(NavigationError):
    """Latitude too close to a pole for the curvature matrix."""


class NotUnit(NavigationError):
    """Quaternion violates the unit-norm constraint."""


class NotRotation(NavigationError):
    """Matrix is not a proper rotation."""


# ===== STREAM ERRORS =====
class GapDetected(NavigationError):
    """Consecutive GNSS fixes are not one update interval apart."""


class InsufficientHistory(NavigationError):
    """Not enough coefficient epochs for the differencing window."""


class EpochOrder(NavigationError):
    """Differenced coefficients arrived out of order."""


class TimeGap(NavigationError):
    """IMU increment is not contiguous with the filter time."""


# ===== SOLVER ERRORS =====
class DegenerateSpectrum(NavigationError):
    """Attitude is unobservable from the accumulated vector pairs."""


class SingularKKT(NavigationError):
    """KKT matrix is numerically singular."""

    def __init__(self, condition: float):
        super().__init__(f"KKT matrix is singular (condition estimate {condition:.3e})")
        self.condition = condition


class NoConvergence(NavigationError):
    """Newton-Lagrange iterations stopped before the step tolerance was met."""

    def __init__(self, result: Any, message: str = "Newton-Lagrange iterations did not converge"):
        super().__init__(message)
        self.result = result


class InnovationOutlier(NavigationError):
    """GNSS innovation failed the chi-square gate."""

    def __init__(self, statistic: float, gate: float):
        super().__init__(f"Innovation statistic {statistic:.3f} exceeds gate {gate:.3f}")
        self.statistic = statistic
        self.gate = gate


# ===== HARNESS ERRORS =====
class ReportIOError(NavigationError):
    """Report files could not be written."""


class ScenarioError(NavigationError):
    """A module error raised while running one scenario, with run context."""

    def __init__(self, cause: Exception, context: Optional[Dict[str, Any]] = None):
        self.cause = cause
        self.context = context or {}
        where = ", ".join(f"{key}={value}" for key, value in self.context.items())
        super().__init__(f"{type(cause).__name__}: {cause} ({where})")
