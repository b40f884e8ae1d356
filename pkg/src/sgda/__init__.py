"""Specification-guided data aggregation for imitation learning."""

__version__ = "0.1.0"
