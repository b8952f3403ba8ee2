"""Simulation and analysis of added Markovian and non-Markovian qubit channels."""

__version__ = "0.1.0"
