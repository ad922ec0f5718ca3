"""Desk-scale dense video captioning: proposals, relational encoding, gated
hierarchical decoding, self-critical training, and from-scratch metrics."""

__version__ = "0.1.0"


class EventcapError(Exception):
    """Base class for package errors."""


class ValidationError(EventcapError):
    """Invalid inputs, files, or configuration (CLI exit code 1)."""
