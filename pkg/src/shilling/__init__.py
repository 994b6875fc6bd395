"""Data-poisoning attacks on user-based neighborhood recommenders."""

__version__ = "0.1.0"
