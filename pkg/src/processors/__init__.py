"""
Solvers and orchestration: ADMM minimization, IMEX evolution, experiment runs.
"""

__version__ = "0.1.0"
