"""Exception types shared across the toolkit."""


class SplatFormatError(ValueError):
    """A splat PLY (or sidecar) file is malformed or holds invalid values."""


class ConfigError(ValueError):
    """A pipeline configuration document failed validation."""


class NumericalError(RuntimeError):
    """A solver or simulation step failed numerically (divergence, NaN, CFL)."""
