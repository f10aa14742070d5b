"""Spatial-spectral reliable contrastive GCN for hyperspectral classification."""

__version__ = "0.1.0"
