"""Acoustic-context embeddings: distortion simulation, quadruplet metric learning, similarity sweeps."""

__version__ = "0.1.0"
