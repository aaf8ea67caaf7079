"""Quadratic-form curvature for singular Riemannian metrics in coordinate charts."""

__version__ = "0.1.0"
