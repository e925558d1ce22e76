"""Simulation and analysis of cavity-heralded entanglement between two trapped ions."""

__version__ = "0.1.0"
