"""Uncertainty quantification for clinical outcome prediction from EHR sequences."""

__version__ = "0.1.0"
