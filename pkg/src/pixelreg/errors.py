"""Exception types shared across the package."""


class PixelregError(Exception):
    """Base class for all pixelreg errors."""


class InvalidStateError(PixelregError):
    """A state vector or control input contains non-finite values."""


class SpacingRangeError(PixelregError):
    """A spacing falls outside the renderable range of the scene."""


class ObjectNotFoundError(PixelregError):
    """Spacing estimation could not locate the lead object in the image."""


class SynthesisInconsistencyError(PixelregError):
    """Output-feedback reduction left a nonvanishing state coefficient."""


class AssumptionViolationError(PixelregError):
    """A measured signal violates one of the structural assumptions."""


class ConfigError(PixelregError):
    """An experiment configuration is malformed or out of range."""


class SimulationAbort(PixelregError):
    """A closed-loop run had to stop (lost object or non-finite state)."""
