"""
Test suite for crossdiff.
"""

__version__ = "0.1.0"
