"""Dynamic citation networks and sequence citation-count prediction."""

__version__ = "0.1.0"
