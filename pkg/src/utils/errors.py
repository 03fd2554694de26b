"""
Exception hierarchy for the cross-diffusion toolkit.

Input problems derive from ValueError, runtime failures from RuntimeError,
so callers that only know the builtin types keep working.
"""

from typing import Optional


class CrossDiffError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(CrossDiffError, ValueError):
    """Invalid run specification or environment value."""

    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


class MeshError(CrossDiffError, ValueError):
    """Invalid mesh input or degenerate element."""

    def __init__(self, message: str, element: Optional[int] = None):
        self.element = element
        if element is not None:
            message = f"{message} (element {element})"
        super().__init__(message)


class FieldMismatchError(CrossDiffError, ValueError):
    """Nodal field does not live on the given mesh or holds non-finite values."""


class DomainError(CrossDiffError, ValueError):
    """Evaluation outside the domain of an operator."""


class ConstraintViolationError(CrossDiffError, RuntimeError):
    """Box or mass constraint violated beyond tolerance."""

    def __init__(
        self,
        message: str,
        node: Optional[int] = None,
        time: Optional[float] = None,
        magnitude: Optional[float] = None
    ):
        self.node = node
        self.time = time
        self.magnitude = magnitude
        details = []
        if node is not None:
            details.append(f"node={node}")
        if time is not None:
            details.append(f"t={time:.6g}")
        if magnitude is not None:
            details.append(f"magnitude={magnitude:.3e}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)


class SolverConvergenceError(CrossDiffError, RuntimeError):
    """Iterative solver stopped before reaching its tolerance."""

    def __init__(self, message: str, residual: float, iterations: Optional[int] = None):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"{message} (residual={residual:.3e}, iterations={iterations})"
        )


class DivergenceError(SolverConvergenceError):
    """ADMM iterates blew up, usually because mu is too small for the interaction."""

    def __init__(self, iteration: int, primal: float):
        self.iteration = iteration
        super().__init__(
            f"ADMM diverged at iteration {iteration} (primal={primal:.3e}); increase mu",
            residual=primal, iterations=iteration
        )


class StageError(CrossDiffError, RuntimeError):
    """Failure of one stage of an experiment run."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
