"""Estimation-aware trajectory planning for systems with set-valued outputs."""

__version__ = "0.1.0"
