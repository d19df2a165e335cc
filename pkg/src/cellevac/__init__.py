"""Crowd evacuation simulation with cell-based exit guidance."""

__version__ = "0.1.0"
