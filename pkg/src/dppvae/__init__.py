"""Variational auto-encoder with a continuous k-DPP prior on the latent batch."""

__version__ = "0.1.0"
