"""Persuasion prediction for two-sided debates from argument-structure features."""

__version__ = "0.1.0"
