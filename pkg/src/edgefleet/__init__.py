"""Desk-scale edge MLOps fleet analytics: sensors, edge agents, registry and supervision."""

__version__ = "0.1.0"
