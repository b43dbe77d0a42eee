"""Matching a high-resolution image against a low-resolution one through a discrete scale-space."""

__version__ = "0.1.0"
