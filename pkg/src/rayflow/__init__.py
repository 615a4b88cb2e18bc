"""RayFlow diffusion distillation on toy 2-D data."""

__version__ = "0.1.0"
