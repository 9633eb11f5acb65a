"""Dirichlet prior augmentation for few-shot time-series classification."""

__version__ = "0.1.0"
