"""Desk-scale gamified ICS security range."""

__version__ = "0.1.0"
