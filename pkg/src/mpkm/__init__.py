"""Multiplierless margin-propagation kernel machine."""

__version__ = "0.1.0"
