"""Pathwise Taylor expansions of path-dependent functionals of Brownian motion."""

__version__ = "0.1.0"
