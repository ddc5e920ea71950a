"""Finite-element and closed-form analysis of Stokes flow past a particle near a wall."""

__version__ = "0.1.0"
