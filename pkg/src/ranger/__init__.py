"""Vulnerability persistence analysis and version range restoration for Maven-style ecosystems."""

__version__ = "0.1.0"
