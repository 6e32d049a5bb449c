"""Batch collocation-recommendation pipeline on a local MapReduce engine."""

__version__ = "0.1.0"
