"""Simulation, fitting and calibration toolkit for flux-driven SNAIL resonators."""

__version__ = "0.1.0"
