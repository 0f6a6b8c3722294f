"""Synthetic radio-burst emitter classification, end to end and from scratch."""

__version__ = "0.1.0"
