"""Promptable volumetric tumor segmentation with parameter-efficient adapters."""

__version__ = "0.1.0"
