"""Hierarchical conversational recommendation with a dynamic-hypergraph state encoder."""

__version__ = "0.1.0"
