"""Chirped-pulse control of a two-mode conical intersection in a dissipative environment."""

__version__ = "0.1.0"
