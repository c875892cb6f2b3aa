"""Coherent hierarchical load forecasting with tree-structured masked networks."""

__version__ = "0.1.0"
