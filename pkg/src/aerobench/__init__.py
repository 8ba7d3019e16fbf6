"""Evaluation harness for surface-pressure surrogate models of road vehicles."""

__version__ = "0.1.0"
