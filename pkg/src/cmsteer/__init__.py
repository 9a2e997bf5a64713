"""Collision-model quantum trajectories and environment-assisted steering."""

__version__ = "0.1.0"
