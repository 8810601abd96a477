"""Desk-scale multi-task document rectification network."""

__version__ = "0.1.0"
