"""Bilevel programs with lower-level second-order optimality conditions."""

__version__ = "0.1.0"
