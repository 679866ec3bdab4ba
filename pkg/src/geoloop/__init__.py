"""Reduced-order simulator for closed-loop geothermal systems."""

__version__ = "0.1.0"
