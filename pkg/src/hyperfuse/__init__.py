"""Hyperspectral cube calibration and fusion onto photogrammetric point clouds."""

__version__ = "0.1.0"
