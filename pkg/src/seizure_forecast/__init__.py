"""Seizure forecasting from wearable physiological signals with CNN/LSTM models."""

__version__ = "0.1.0"
