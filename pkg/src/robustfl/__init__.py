"""Robust feedback linearization with minimax LQR tracking design."""

__version__ = "0.1.0"
