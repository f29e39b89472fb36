"""Post-hoc figures from solver CSV artifacts."""

__version__ = "0.1.0"
