"""Recurrent-VAE botnet detection on aggregated network flows."""

__version__ = "0.1.0"
