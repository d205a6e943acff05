"""Reciprocating multi-part probe insertion: simulation and analysis."""

__version__ = "0.1.0"
