"""
Nonlocal Cross-Diffusion with Size Exclusion

A Python library and command-line tool for the two-species nonlocal
cross-diffusion model: constrained energy minimization by ADMM splitting and
transient gradient-flow evolution by an implicit-explicit P1 finite-element
scheme, with diagnostics for energy decay, entropy dissipation, constraint
invariants and stationarity.
"""

__version__ = "0.1.0"
__author__ = "Crossdiff Project"
