"""Ptychographic reconstruction in pixel space or in the latent space of a trained decoder."""

__version__ = "0.1.0"
