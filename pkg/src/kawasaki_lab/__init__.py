"""Simulation and verification toolkit for Kawasaki-type jump dynamics of
repelling point particles in continuum."""

__version__ = "0.1.0"
