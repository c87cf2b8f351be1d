"""Outcome-predictive state abstractions, option discovery and transfer experiments."""

__version__ = "0.1.0"
