"""Topic discovery and topic evolution tracking for web pages linked from tweets."""

__version__ = "0.1.0"
