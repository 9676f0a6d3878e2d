"""Intrinsic image decomposition toolkit for clothing-like textured images."""

__version__ = "0.1.0"
