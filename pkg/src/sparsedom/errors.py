"""Exception types raised across the package."""


class SparsedomError(Exception):
    """Base class for package errors."""


class NullCubeError(SparsedomError, ValueError):
    """An average or normalization was requested on a cube of zero mass."""


class ResourceCapError(SparsedomError):
    """A tree or matrix would exceed the configured size cap."""


class PreconditionError(SparsedomError, ValueError):
    """Inputs violate a stated precondition (e.g. lambda too small)."""


class GeometryInfeasibleError(SparsedomError, ValueError):
    """The tree cannot realize the requested geometric configuration."""


class ConsistencyError(SparsedomError):
    """Two quantities that must agree do not."""


class ConfigError(SparsedomError, ValueError):
    """Malformed scenario or input file."""


class QuadratureError(SparsedomError):
    """Adaptive quadrature failed to reach the requested tolerance."""
