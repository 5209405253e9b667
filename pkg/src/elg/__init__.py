"""Elastic inclusion imaging from sparse boundary data via joint sparse recovery."""

__version__ = "0.1.0"
