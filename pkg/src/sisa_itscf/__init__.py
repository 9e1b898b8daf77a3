"""Exact SISA unlearning for transformer inter-turn fault localization."""

__version__ = "0.1.0"
