"""Singular conditional probability: fan measures, canonical measures and when they agree."""

__version__ = "0.1.0"
