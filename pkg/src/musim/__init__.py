"""Multimodal ELD user simulator for the collaborative Find task."""

__version__ = "0.1.0"
