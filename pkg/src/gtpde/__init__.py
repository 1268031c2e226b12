"""Multiscale toolkit: gap-tooth particle Burgers, transport-distance
variable discovery via diffusion maps, and neural learning of the coarse PDE."""

from . import kernels

__version__ = "0.1.0"

__all__ = ["kernels", "__version__"]
