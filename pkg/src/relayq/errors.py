"""Exception types shared across the package."""


class RelayQError(Exception):
    """Base class for all package errors."""


class StabilityError(RelayQError):
    """Equilibrium requested for an unstable parameter point (load >= 1)."""


class NumericsError(RelayQError):
    """A numerical routine failed (lost bracket, singular system, divergence)."""


class UnsupportedParameterError(RelayQError):
    """Parameters outside the supported regime (e.g. PSA with a != 1/2)."""


class GridError(RelayQError):
    """A probability grid is too small, unnormalized, or otherwise unusable."""
