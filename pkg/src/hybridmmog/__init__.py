"""Simulation toolkit for hybrid peer/cloud support of massively multiplayer games."""

__version__ = "0.1.0"
