"""Jarzynski-adjusted Langevin particle methods for marginal likelihood."""

__version__ = "0.1.0"
