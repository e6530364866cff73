"""Transformer and non-negative MLP risk models for mixed-type clinical tables."""

__version__ = "0.1.0"
