"""Synthetic transparent-object datasets: scene generation, caustic rendering, ground truth."""

__version__ = "0.1.0"
