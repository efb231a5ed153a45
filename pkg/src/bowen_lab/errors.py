"""Exception types raised by the laboratory.

Every failure mode that a caller may want to react to has its own class so
that the CLI can map them to diagnostic rows and exit codes.
"""


class BowenLabError(Exception):
    """Base class for all library errors."""


class DimensionError(BowenLabError, ValueError):
    """Subspaces or vectors have incompatible dimensions or ranks."""


class DomainError(BowenLabError, ValueError):
    """An argument lies outside the domain of an operation (empty input, degenerate basis...)."""


class OrbitError(BowenLabError, ArithmeticError):
    """An inverse-map Newton solve failed to converge."""


class BranchError(BowenLabError, ArithmeticError):
    """No inverse branch of the solenoid is consistent with the attractor."""


class RadiusError(BowenLabError, ValueError):
    """A chart vector lies outside the radius where the operation is defined."""


class PinchViolation(BowenLabError, ArithmeticError):
    """A linearization iterate left its guaranteed range (block exponent too small)."""


class HolonomyError(BowenLabError, ArithmeticError):
    """A stable holonomy search did not reach the requested residual."""


class BracketError(BowenLabError, ArithmeticError):
    """A fast unstable leaf did not meet the slow direction inside the chart."""


class DominationError(BowenLabError, ValueError):
    """Rates supplied for a dominated splitting are not ordered."""


class ConfigError(BowenLabError, ValueError):
    """A run configuration is malformed."""
