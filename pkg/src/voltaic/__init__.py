"""Steady states of ideal nonlinear resistive networks and equilibrium-propagation training."""

__version__ = "0.1.0"
