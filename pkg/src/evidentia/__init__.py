"""Evidential ordinal regression with bilateral asymmetry encoding,
prototype memory, and a trust-evaluation suite."""
__version__ = "0.1.0"
