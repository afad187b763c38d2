"""Trace-estimation (one-clean-qubit) machine-learning models: simulation, spectra, training and experiments."""

__version__ = "0.1.0"
