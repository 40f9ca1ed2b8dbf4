"""Desk-scale toolkit: volumetric tumor segmentation and survival modeling."""

__version__ = "0.1.0"
