"""Hierarchical vision transformers with GCN positional embeddings, on numpy."""

__version__ = "0.1.0"
