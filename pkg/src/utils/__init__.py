"""
Utility functions for logging, errors, sparse linear algebra and CSV artifacts.
"""

__version__ = "0.1.0"
