"""Semantic keyword expansion and relevance-filtered ad matching engine."""

__version__ = "0.1.0"
