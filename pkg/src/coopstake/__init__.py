"""Cooperative proof-of-stake network with accountable agents."""

__version__ = "0.1.0"
