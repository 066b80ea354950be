"""Prediction profile models for partially observable discrete systems."""
__version__ = "0.1.0"
