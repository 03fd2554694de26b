"""
Configuration management: environment settings and run specifications.
"""

__version__ = "0.1.0"
