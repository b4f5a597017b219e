"""Synthetic moving-point-light relighting videos, a toy controllable denoiser, and metrics."""

__version__ = "0.1.0"
