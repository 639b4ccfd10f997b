"""Infinite factorial linear dynamical systems for transient signal detection."""

__version__ = "0.1.0"
