"""Hybrid agent-based / discrete-event hospital simulator with a
fractional-factorial screening harness."""

__version__ = "0.1.0"
