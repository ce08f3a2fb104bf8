"""Coherence-aware conditional diffusion on a desk-scale toy benchmark."""

__version__ = "0.1.0"
