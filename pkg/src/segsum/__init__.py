"""Joint document segmentation and per-section heading generation."""

__version__ = "0.1.0"
