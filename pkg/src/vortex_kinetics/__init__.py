"""Kinetic limits of point-vortex systems: N-body ensembles, cumulant hierarchies and effective equations."""

__version__ = "0.1.0"
