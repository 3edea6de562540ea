"""Regularized belief search, search-augmented imitation, and anchored
Q-learning on a configurable Hanabi engine, with a live play server."""

__version__ = "0.1.0"
