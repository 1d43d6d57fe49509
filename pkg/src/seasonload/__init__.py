"""Seasonal variation in residential load patterns and its socioeconomic drivers."""

__version__ = "0.1.0"
