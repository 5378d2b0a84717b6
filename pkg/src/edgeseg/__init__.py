"""Segmentation from synthetic edge-diagram/image pairs."""

__version__ = "0.1.0"
