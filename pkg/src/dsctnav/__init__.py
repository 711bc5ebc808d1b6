"""Spacecraft position and clock offset from delta Scuti star photometry."""

__version__ = "0.1.0"
