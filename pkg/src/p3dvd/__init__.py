"""Pseudo-3D vehicle detection tooling: representation, double-window images,
losses, head decoding and evaluation."""

__version__ = "0.1.0"
