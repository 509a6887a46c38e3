"""Swing-intention, causal-approach and run-value analytics."""

__version__ = "0.1.0"
