"""Simulation laboratory for self-interacting random walks and their urn, branching and diffusion companions."""

__version__ = "0.1.0"
