"""Sequence-model prediction of GPU kernel tuning parameters."""

__version__ = "0.1.0"
