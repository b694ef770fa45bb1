"""Adaptive optimal input design for SISO LTI systems."""

__version__ = "0.1.0"
