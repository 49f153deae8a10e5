"""Guided triangle-mesh deformation by optimizing per-face Jacobians through a
differentiable Poisson solve and differentiable multi-view rendering."""

__version__ = "0.1.0"
