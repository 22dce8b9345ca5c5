"""Texture-and-structure-aware image smoothing toolkit."""

__version__ = "0.1.0"
