"""Numerical laboratory for unique continuation of the 3D Lame system."""

__version__ = "0.1.0"
