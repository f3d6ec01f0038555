"""Tunable-coupler CZ gate simulation and hybrid RL + gradient pulse optimization."""

__version__ = "0.1.0"
