"""Kinetic-fluid solvers and diagnostics for the light-particle limit on the torus."""

__version__ = "0.1.0"
