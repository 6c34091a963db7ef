"""Quantum-inspired optimisation for financial networks and dynamic portfolios."""

__version__ = "0.1.0"
