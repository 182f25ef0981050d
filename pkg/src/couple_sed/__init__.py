"""Couple Learning for desk-scale semi-supervised sound event detection."""

__version__ = "0.1.0"

from . import crnn, dataio, evalkit, features, losses, numkit, plg, teacher  # noqa: F401
