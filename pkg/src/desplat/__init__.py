"""desplat: decouple objects from contacted scenes in Gaussian-splat captures,
restore both via joint Poisson indicator fields, and simulate the result with
an MLS-MPM continuum solver."""

from .backend import backend_name
from .errors import ConfigError, NumericalError, SplatFormatError
from .splats import Camera, GaussianKernel, SplatScene, load_ply, save_ply

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "ConfigError",
    "GaussianKernel",
    "NumericalError",
    "SplatFormatError",
    "SplatScene",
    "backend_name",
    "load_ply",
    "save_ply",
    "__version__",
]
