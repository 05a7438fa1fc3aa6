"""Factored non-stationary RL: simulation, identification, model learning and control."""

__version__ = "0.1.0"
