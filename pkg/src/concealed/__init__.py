"""Concealed communication: challenge-guarded addresses, mixes and an OSN layer."""

__version__ = "0.1.0"
