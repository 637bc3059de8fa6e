"""Semantics-to-Space zero-shot verb-object inference at desk scale."""

__version__ = "0.1.0"
