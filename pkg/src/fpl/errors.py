"""Exception hierarchy shared by all fpl modules."""


class FplError(Exception):
    """Base class for every error raised by fpl."""


class DomainError(FplError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class ExtrapolationError(DomainError):
    """A tabulated quantity was queried outside its table."""


class InvalidSpecError(FplError, ValueError):
    """A model, kernel or rate specification is internally inconsistent."""


class ResourceError(FplError, MemoryError):
    """A requested discretization exceeds the configured memory budget."""


class NumericalFailure(FplError, ArithmeticError):
    """Non-finite values appeared during a computation."""


class StabilityError(FplError):
    """An explicit integrator was asked to run above its stable step."""


class DegenerateGeometryError(FplError, ValueError):
    """Interpolation centers do not determine the polynomial tail."""


class ConfigError(FplError, ValueError):
    """A scenario configuration failed validation."""


class PlotError(FplError, ValueError):
    """A plot request names no series or a series missing from its CSV."""
