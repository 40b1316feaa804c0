"""Pulse-based fake-video detection with a two-branch convolutional
attention network trained by heart-rate pretraining and frozen-trunk
fine-tuning."""

__version__ = "0.1.0"
