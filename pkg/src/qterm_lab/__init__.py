"""Tilted empirical risk tools for projector-valued hypotheses on simulated quantum data."""

__version__ = "0.1.0"
