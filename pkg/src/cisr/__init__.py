"""Curriculum induction for safe reinforcement learning."""

__version__ = "0.1.0"
