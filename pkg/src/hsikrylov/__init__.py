"""Simulation of adaptive low-rank hyperspectral acquisition with coded apertures."""
from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
