"""Hydropower-aware power system study toolkit."""

__version__ = "0.1.0"
