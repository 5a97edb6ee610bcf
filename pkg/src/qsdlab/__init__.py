"""Numerical lab for quasi-stationary distributions of absorbed diffusions."""

__version__ = "0.1.0"
