"""Degree-biased graph GAN: WGAN-GP with an R-GCN critic and a degree reward."""

__version__ = "0.1.0"
