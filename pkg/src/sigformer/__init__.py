"""Windowed path-signature features with a single-head attention model."""

__version__ = "0.1.0"
