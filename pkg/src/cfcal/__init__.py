"""Bayesian calibration and stochastic simulation of the IDM with AR(p) errors."""
__version__ = "0.1.0"
