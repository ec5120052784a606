"""Geodesic latent-space editing toolkit."""

__version__ = "0.1.0"
