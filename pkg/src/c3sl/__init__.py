"""Batch-wise compression for split learning via circular convolution."""

__version__ = "0.1.0"
