"""Monotonically constrained simultaneous quantile regression forecasting:
an LSTM embedding feeding a calibrated lattice ensemble that outputs
crossover-free multi-horizon quantile forecasts, with comparison heads and
a probabilistic evaluation suite."""

__version__ = "0.1.0"
