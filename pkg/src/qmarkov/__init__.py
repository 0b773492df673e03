"""Quantum Markov states, assignment maps and reduced dynamics."""

__version__ = "0.1.0"
