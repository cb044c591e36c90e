"""Simulation and verification toolkit for random walks in random environment."""

__version__ = "0.1.0"
