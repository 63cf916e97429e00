"""Malliavin Lab - Numerical verification of divergence, heat-kernel and stochastic-flow identities."""

__version__ = "0.1.0"
