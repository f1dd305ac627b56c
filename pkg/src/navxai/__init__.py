"""Gradient-attribution workbench for 2D lidar navigation policies."""

__version__ = "0.1.0"
