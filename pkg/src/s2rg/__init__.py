"""Predict sim-to-sim transfer of RL policies with quantized probabilistic dynamics models."""

__version__ = "0.1.0"
