"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid experiment or model configuration (unknown phase, bad constants...)."""


class AliasingError(ValueError):
    """Grid too coarse to resolve the microstructure at scale eta."""


class HullError(ValueError):
    """A homogenized law was queried outside its tabulated range."""

    def __init__(self, message, needed_range=None):
        super().__init__(message)
        self.needed_range = needed_range


class GridTooSmallError(ValueError):
    """A numeric Legendre transform could not bracket the supremum."""

    def __init__(self, message, required_radius):
        super().__init__(message)
        self.required_radius = required_radius


class SeedMismatchError(ValueError):
    """Fields from different realizations (seed or eta) were combined."""


class ConvergenceError(RuntimeError):
    """An iterative solve stopped before its duality gap met the tolerance."""

    def __init__(self, message, gap, result=None):
        super().__init__(message)
        self.gap = gap
        self.result = result
