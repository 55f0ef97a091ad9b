"""Hilbert geometry, geodesic flow and Patterson-Sullivan tools for convex projective group actions."""

__version__ = "0.1.0"
