"""Unpredictable control: noise design against one-step output prediction."""

__version__ = "0.1.0"
