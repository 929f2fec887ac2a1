"""Similarity-driven meta-learning for compositional generalization."""

__version__ = "0.1.0"
