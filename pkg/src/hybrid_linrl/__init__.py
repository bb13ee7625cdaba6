"""Hybrid offline/online reinforcement learning for linear MDPs."""

__version__ = "0.1.0"
