"""Polyspectra and waiting-time analysis of monitored Markov systems."""

__version__ = "0.1.0"
