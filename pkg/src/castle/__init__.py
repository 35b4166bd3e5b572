"""Covert byte transport over a simulated RTS game session."""

__version__ = "0.1.0"
