"""Situational-constrained reinforcement learning on region-labelled grid worlds."""

__version__ = "0.1.0"
