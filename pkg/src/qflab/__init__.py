"""Desk-scale quantum federated learning laboratory."""

__version__ = "0.1.0"
