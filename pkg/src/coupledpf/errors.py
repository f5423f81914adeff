"""Exception types raised across the package."""


class InvalidParameterError(ValueError):
    """A constructor or routine received a parameter outside its valid range."""


class InvalidInputError(ValueError):
    """Inputs are structurally inconsistent (shapes, lengths)."""


class CapabilityError(TypeError):
    """The model lacks a capability the requested operation needs."""


class CapacityError(ValueError):
    """The requested exact computation exceeds the supported size."""


class DegenerateModelError(ValueError):
    """The model has zero normalising constant."""


class InvalidReferenceError(ValueError):
    """A reference trajectory has zero unnormalised density."""


class DegenerateWeightsError(RuntimeError):
    """All weights vanished (or a weight was negative / not finite).

    ``t`` holds the 0-based time index at which it happened, when known.
    """

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class ConfigError(ValueError):
    """A sweep configuration is invalid."""
