"""
Sparse linear-algebra utilities for the cross-diffusion toolkit.

Wraps assembled matrices in a small SparseSystem container and provides a
residual-checked linear solve used by the Poisson convolution and the IMEX
time stepper.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import bicgstab, cg, spsolve

from src.utils.errors import FieldMismatchError, SolverConvergenceError
from src.utils.logger import get_logger

logger = get_logger(__name__)

SYMMETRY_RTOL = 1e-12
ITERATION_CAP_FACTOR = 10


@dataclass(frozen=True)
class SparseSystem:
    """
    Assembled sparse matrix with a symmetry flag.

    The matrix is stored in CSR format; ``triplets()`` exposes the
    row/column/value view.
    """

    matrix: sp.csr_matrix
    symmetric: bool = False

    def __post_init__(self):
        matrix = sp.csr_matrix(self.matrix, dtype=float)
        matrix.sum_duplicates()
        object.__setattr__(self, "matrix", matrix)

        rows, cols = matrix.shape
        if rows != cols:
            raise ValueError(f"SparseSystem must be square, got shape {matrix.shape}")

        if self.symmetric:
            scale = abs(matrix).max() if matrix.nnz else 0.0
            asym = abs(matrix - matrix.T).max() if matrix.nnz else 0.0
            if asym > SYMMETRY_RTOL * max(scale, 1.0):
                raise ValueError(
                    f"SparseSystem flagged symmetric but asymmetry is {asym:.3e} "
                    f"(scale {scale:.3e})"
                )

    @classmethod
    def from_triplets(
        cls,
        rows: np.ndarray,
        cols: np.ndarray,
        values: np.ndarray,
        dimension: int,
        symmetric: bool = False
    ) -> "SparseSystem":
        """
        Build a system from COO triplets; duplicate entries are summed.

        Args:
            rows: Row indices
            cols: Column indices
            values: Entry values
            dimension: Matrix dimension
            symmetric: Whether the system is symmetric

        Returns:
            SparseSystem instance
        """
        matrix = sp.coo_matrix((values, (rows, cols)), shape=(dimension, dimension))
        return cls(matrix=matrix.tocsr(), symmetric=symmetric)

    @property
    def dimension(self) -> int:
        """Number of rows (equals number of columns)."""
        return self.matrix.shape[0]

    def triplets(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (rows, cols, values) of the stored entries."""
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data

    def __matmul__(self, other: np.ndarray) -> np.ndarray:
        return self.matrix @ other


def relative_residual(matrix: sp.spmatrix, x: np.ndarray, rhs: np.ndarray) -> float:
    """
    Compute ||A x - rhs|| / ||rhs|| (absolute residual if rhs is zero).

    Args:
        matrix: System matrix
        x: Candidate solution
        rhs: Right-hand side

    Returns:
        Relative residual norm
    """
    residual = np.linalg.norm(matrix @ x - rhs)
    rhs_norm = np.linalg.norm(rhs)
    return float(residual / rhs_norm) if rhs_norm > 0 else float(residual)


def solve_sparse(
    system: SparseSystem,
    rhs: np.ndarray,
    tol: float = 1e-10,
    method: str = "auto",
    max_iter: Optional[int] = None,
    x0: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Solve a sparse linear system with a residual guarantee.

    Symmetric systems use Jacobi-preconditioned conjugate gradients, general
    systems a direct sparse factorization (or BiCGSTAB on request). If the
    iterative method misses the tolerance a direct solve is attempted before
    giving up.

    Args:
        system: Assembled system
        rhs: Right-hand side vector
        tol: Required relative residual ||A x - rhs|| / ||rhs||
        method: 'auto', 'cg', 'bicgstab' or 'direct'
        max_iter: Iteration cap for iterative methods (default 10 * dimension)
        x0: Optional initial guess

    Returns:
        Solution vector

    Raises:
        FieldMismatchError: If rhs length does not match the system
        SolverConvergenceError: If the residual tolerance cannot be met
    """
    rhs = np.asarray(rhs, dtype=float)
    n = system.dimension
    if rhs.shape != (n,):
        raise FieldMismatchError(
            f"Right-hand side has shape {rhs.shape}, system dimension is {n}"
        )
    if not np.all(np.isfinite(rhs)):
        raise FieldMismatchError("Right-hand side contains non-finite values")

    if not np.any(rhs):
        return np.zeros(n)

    if method == "auto":
        method = "cg" if system.symmetric else "direct"
    if max_iter is None:
        max_iter = ITERATION_CAP_FACTOR * n

    matrix = system.matrix
    x = None
    iterations = 0

    if method in ("cg", "bicgstab"):
        diagonal = matrix.diagonal()
        preconditioner = None
        if np.all(diagonal > 0):
            preconditioner = sp.diags(1.0 / diagonal)

        counter = {"n": 0}

        def _count(_xk):
            counter["n"] += 1

        solver = cg if method == "cg" else bicgstab
        x, info = solver(
            matrix,
            rhs,
            x0=x0,
            rtol=0.1 * tol,
            atol=0.0,
            maxiter=max_iter,
            M=preconditioner,
            callback=_count
        )
        iterations = counter["n"]
        achieved = relative_residual(matrix, x, rhs)

        if achieved <= tol:
            logger.debug(f"{method} converged: n={n}, iterations={iterations}, residual={achieved:.2e}")
            return x

        logger.warning(
            f"{method} missed tolerance (info={info}, iterations={iterations}, "
            f"residual={achieved:.2e}); falling back to direct solve"
        )
    elif method != "direct":
        raise ValueError(f"Unknown solver method: {method}")

    x = np.asarray(spsolve(matrix.tocsc(), rhs)).reshape(-1)
    achieved = relative_residual(matrix, x, rhs) if np.all(np.isfinite(x)) else np.inf

    if achieved > tol:
        raise SolverConvergenceError(
            f"Sparse solve failed to reach tolerance {tol:.1e}",
            residual=achieved,
            iterations=iterations
        )

    logger.debug(f"Direct solve: n={n}, residual={achieved:.2e}")
    return x
