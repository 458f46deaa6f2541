"""Numerical Finsler geometry: curvature tensors, scalar fits, spray transport."""

__version__ = "0.1.0"
