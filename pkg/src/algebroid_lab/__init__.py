"""Computational toolkit for Lie algebroids given in local coordinates."""

__version__ = "0.1.0"
