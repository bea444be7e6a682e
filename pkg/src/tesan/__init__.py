"""Event-code embeddings learned with interval-aware self-attention."""

__version__ = "0.1.0"
