"""Pose tokenization, threshold-adaptive loss scaling and camera-bias experiments."""

__version__ = "0.1.0"
