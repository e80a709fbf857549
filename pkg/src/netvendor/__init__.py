"""Network device vendor fingerprinting toolkit."""

__version__ = "0.1.0"
