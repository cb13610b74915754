"""Homogenized von Karman shell energy densities from periodic microstructures."""

__version__ = "0.1.0"
