"""Curvilinear segmentation dataset expansion with caption recombination and SPADE-controlled diffusion."""

__version__ = "0.1.0"
