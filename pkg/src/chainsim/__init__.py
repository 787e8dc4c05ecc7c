"""Blockchain engine and deterministic multi-node network simulator."""

__version__ = "0.1.0"
