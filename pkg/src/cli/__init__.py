"""
Command-line entry point: run, preset and check commands.
"""

__version__ = "0.1.0"
