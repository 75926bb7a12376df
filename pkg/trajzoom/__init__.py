"""Monitored-qubit quantum trajectories in real and effective time."""

__version__ = "0.3.0"
