"""Tail-robust named-entity disambiguation with structured KB signals."""

__version__ = "0.1.0"
