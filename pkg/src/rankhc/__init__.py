"""Rank-based higher criticism for sparse anomalies across referentials."""

__version__ = "0.1.0"
