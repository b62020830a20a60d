"""Porous infill topology optimization on regular 2D grids."""
__version__ = "0.1.0"
