"""
Numerical services: meshes and P1 finite elements, kernels, energies, diagnostics.
"""

__version__ = "0.1.0"
