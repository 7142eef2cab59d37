"""Balance-aware sequence sampling for multi-modal classifiers."""

__version__ = "0.1.0"
