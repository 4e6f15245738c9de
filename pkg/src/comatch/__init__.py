"""Collaborative case matching: human-machine decision fusion with
prototype-level uncertainty estimation."""

__version__ = "0.1.0"
