"""Spatial mixture models with a latent land-use field for water-quality series."""

__version__ = "0.1.0"
