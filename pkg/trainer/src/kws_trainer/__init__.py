"""Quantization-aware trainer for the time-domain KWS front end's classifier."""

__version__ = "0.1.0"
