"""Spectral analysis of random Schroedinger operators on regular trees."""
__version__ = "0.1.0"
