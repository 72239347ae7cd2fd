"""Reachability-aware grasp planning on precomputed 6D reachability fields."""

__version__ = "0.1.0"
