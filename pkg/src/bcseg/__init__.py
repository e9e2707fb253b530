"""Boundary-constrained 3D multi-organ segmentation."""

__version__ = "0.1.0"
