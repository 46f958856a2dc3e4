"""Forecasting of upper-body behaviour (face, body and hand landmarks) in dyadic conversations."""
__version__ = "0.1.0"
