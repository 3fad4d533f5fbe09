"""Visual spatiotemporal graph neural network for nighttime-light forecasting."""

__version__ = "0.1.0"
