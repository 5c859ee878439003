"""Tactile three-fingered hand simulator and learning toolkit."""

__version__ = "0.1.0"
