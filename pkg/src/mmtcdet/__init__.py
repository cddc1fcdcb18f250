"""Adaptive activity-aware list detection for sparse multiuser uplinks."""
__version__ = "0.1.0"
