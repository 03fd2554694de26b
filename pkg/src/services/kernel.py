"""
Interaction kernels and convolution operators.

Two realizations of K*f are provided:

- free_quadrature (1D): nodal quadrature of the integral against the kernel,
  backed by a dense matrix precomputed once per mesh and kernel;
- dirichlet_poisson (1D and 2D, Coulomb only): the P1 solution of
  -Laplace(u) = f with u = 0 on the boundary, backed by a sparse LU
  factorization of the interior stiffness block.

Both operators are paired with the nodal quadrature weights W so that
integrate(g * (K*f)) == integrate(f * (K*g)) exactly.
"""

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Union

import numpy as np
from scipy.sparse.linalg import splu
from scipy.special import gamma

from src.config.config_manager import get_config
from src.services.mesh import Mesh, check_field, element_gradients, nodal_average
from src.utils.errors import DomainError, FieldMismatchError
from src.utils.logger import get_logger
from src.utils.sparse_utils import SparseSystem, relative_residual, solve_sparse

logger = get_logger(__name__)

DEFAULT_GAUSSIAN_SIGMA = 0.1


class KernelKind(str, Enum):
    """Supported interaction kernels."""

    COULOMB = "coulomb"
    GAUSSIAN = "gaussian"


class ConvolutionMode(str, Enum):
    """Realization of the convolution K*f on a bounded mesh."""

    FREE_QUADRATURE = "free_quadrature"
    DIRICHLET_POISSON = "dirichlet_poisson"


@dataclass(frozen=True)
class KernelSpec:
    """
    Interaction kernel description.

    Attributes:
        kind: Kernel family
        dimension: Space dimension N
        sigma: Gaussian width (ignored for the Coulomb kernel)
    """

    kind: KernelKind = KernelKind.COULOMB
    dimension: int = 1
    sigma: float = DEFAULT_GAUSSIAN_SIGMA

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if self.dimension < 1:
            raise ValueError(f"Kernel dimension must be positive, got {self.dimension}")
        if self.kind is KernelKind.GAUSSIAN and not self.sigma > 0:
            raise ValueError(f"Gaussian width must be positive, got {self.sigma}")

    @property
    def total_mass(self) -> float:
        """
        Integral k of the kernel over the whole space.

        Raises:
            DomainError: For the Coulomb kernel, which is not integrable
        """
        if self.kind is not KernelKind.GAUSSIAN:
            raise DomainError("Coulomb kernel has no finite total mass")
        return (2.0 * math.pi * self.sigma ** 2) ** (self.dimension / 2)

    def evaluate(self, distance: Union[float, np.ndarray]) -> np.ndarray:
        """
        Evaluate the radial kernel at the given distances |x|.

        Args:
            distance: Nonnegative distances

        Returns:
            Kernel values with the shape of distance
        """
        if self.kind is KernelKind.GAUSSIAN:
            d = np.asarray(distance, dtype=float)
            return np.exp(-(d ** 2) / (2.0 * self.sigma ** 2))
        return coulomb_eval(distance, self.dimension)


def coulomb_eval(x: Union[float, np.ndarray], dimension: int) -> np.ndarray:
    """
    Evaluate the Coulomb kernel (fundamental solution of -Laplace).

    Args:
        x: Point(s) or distance(s); for arrays the last axis holds the
            coordinates when dimension > 1 and the shape is (..., dimension),
            otherwise values are read as distances
        dimension: Space dimension N

    Returns:
        -|x|/2 for N=1, -log|x|/(2 pi) for N=2,
        1/((N-2) omega_N |x|^(N-2)) for N>=3, with omega_N the surface
        area of the unit sphere

    Raises:
        DomainError: At x = 0 for N >= 2
    """
    values = np.asarray(x, dtype=float)
    if dimension > 1 and values.ndim >= 1 and values.shape[-1] == dimension:
        distance = np.linalg.norm(values, axis=-1)
    else:
        distance = np.abs(values)

    if dimension == 1:
        return -0.5 * distance

    if np.any(distance == 0.0):
        raise DomainError(f"Coulomb kernel is singular at the origin for N={dimension}")

    if dimension == 2:
        return -np.log(distance) / (2.0 * math.pi)

    surface = 2.0 * math.pi ** (dimension / 2) / gamma(dimension / 2)
    return 1.0 / ((dimension - 2) * surface * distance ** (dimension - 2))


def default_mode(dimension: int) -> ConvolutionMode:
    """Default convolution realization: quadrature in 1D, Poisson solve in 2D."""
    if dimension == 1:
        return ConvolutionMode.FREE_QUADRATURE
    return ConvolutionMode.DIRICHLET_POISSON


class ConvolutionService:
    """
    Precomputed convolution operator for one (mesh, kernel, mode) triple.

    The operator is built on construction and then only read, so one
    instance can be shared between threads.
    """

    def __init__(self, mesh: Mesh, spec: KernelSpec, mode: ConvolutionMode):
        """
        Initialize and precompute the operator.

        Args:
            mesh: Mesh the fields live on
            spec: Kernel specification
            mode: Convolution realization

        Raises:
            DomainError: On a mode/dimension or mode/kernel mismatch
        """
        self.mesh = mesh
        self.spec = spec
        self.mode = ConvolutionMode(mode)
        self.linear_tol = get_config().linear_tol

        if spec.dimension != mesh.dimension:
            raise DomainError(
                f"Kernel dimension {spec.dimension} does not match mesh dimension {mesh.dimension}"
            )

        self._weights = np.asarray(mesh.lumped_mass)

        if self.mode is ConvolutionMode.FREE_QUADRATURE:
            if mesh.dimension != 1:
                raise DomainError("free_quadrature convolution is only available on 1D meshes")
            self._setup_quadrature()
        else:
            if spec.kind is not KernelKind.COULOMB:
                raise DomainError("dirichlet_poisson convolution requires the Coulomb kernel")
            self._setup_poisson()

        logger.debug(
            f"Convolution ready: kind={spec.kind.value}, mode={self.mode.value}, n={mesh.n_nodes}"
        )

    def _setup_quadrature(self) -> None:
        x = self.mesh.x
        kernel = self.spec.evaluate(np.abs(x[:, None] - x[None, :]))
        self._operator = kernel * self._weights[None, :]

    def _setup_poisson(self) -> None:
        interior = np.flatnonzero(~self.mesh.boundary)
        if interior.size == 0:
            raise DomainError("Mesh has no interior nodes for the Dirichlet Poisson solve")
        block = self.mesh.stiffness.matrix[interior][:, interior].tocsc()
        self._interior = interior
        self._interior_system = SparseSystem(block, symmetric=True)
        self._lu = splu(block)

    def apply(self, values: np.ndarray) -> np.ndarray:
        """
        Apply the convolution to one field or to the columns of a stack.

        Args:
            values: Array of shape (n_nodes,) or (n_nodes, k)

        Returns:
            Convolved values of the same shape
        """
        if self.mode is ConvolutionMode.FREE_QUADRATURE:
            return self._operator @ values

        load = self._weights.reshape((-1,) + (1,) * (values.ndim - 1)) * values
        rhs = load[self._interior]
        u_interior = self._lu.solve(rhs)

        columns = u_interior.reshape(len(self._interior), -1)
        rhs_columns = rhs.reshape(len(self._interior), -1)
        for j in range(columns.shape[1]):
            residual = relative_residual(self._interior_system.matrix, columns[:, j], rhs_columns[:, j])
            if residual > self.linear_tol:
                logger.warning(
                    f"LU solve residual {residual:.2e} above tolerance; re-solving iteratively"
                )
                columns[:, j] = solve_sparse(
                    self._interior_system, rhs_columns[:, j], tol=self.linear_tol
                )
        u_interior = columns.reshape(u_interior.shape)

        result = np.zeros_like(load)
        result[self._interior] = u_interior
        return result


@lru_cache(maxsize=32)
def get_convolution_service(
    mesh: Mesh,
    spec: KernelSpec,
    mode: ConvolutionMode
) -> ConvolutionService:
    """Return the shared ConvolutionService for (mesh, spec, mode)."""
    return ConvolutionService(mesh, spec, mode)


def convolve(mesh: Mesh, f: np.ndarray, spec: KernelSpec, mode: ConvolutionMode) -> np.ndarray:
    """
    Convolve a nodal field with the kernel.

    Args:
        mesh: Mesh
        f: Nodal field
        spec: Kernel specification
        mode: Convolution realization

    Returns:
        Nodal field K*f

    Raises:
        FieldMismatchError: If f does not live on mesh
        DomainError: On a mode mismatch
    """
    f = check_field(mesh, f, "f")
    return get_convolution_service(mesh, spec, ConvolutionMode(mode)).apply(f)


def grad_convolve(mesh: Mesh, f: np.ndarray, spec: KernelSpec, mode: ConvolutionMode) -> np.ndarray:
    """
    Gradient of K*f, averaged from elements to nodes.

    Returns:
        Array of shape (n_nodes, dimension)
    """
    potential = convolve(mesh, f, spec, mode)
    return nodal_average(mesh, element_gradients(mesh, potential))


def nonlocal_laplacian(mesh: Mesh, u: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """
    Nonlocal Laplacian (1/k) K*u - u of an integrable kernel.

    Args:
        mesh: 1D mesh
        u: Nodal field
        spec: Gaussian kernel specification

    Returns:
        Nodal field

    Raises:
        DomainError: For a non-integrable kernel
    """
    if spec.kind is not KernelKind.GAUSSIAN:
        raise DomainError("Nonlocal Laplacian needs an integrable kernel with positive mass")
    u = check_field(mesh, u, "u")
    smoothed = convolve(mesh, u, spec, ConvolutionMode.FREE_QUADRATURE)
    return smoothed / spec.total_mass - u


def convolve_pair(
    mesh: Mesh,
    r: np.ndarray,
    b: np.ndarray,
    spec: KernelSpec,
    mode: ConvolutionMode
) -> np.ndarray:
    """
    Convolve two fields in one pass.

    Returns:
        Array of shape (n_nodes, 2) holding K*r and K*b
    """
    r = check_field(mesh, r, "r")
    b = check_field(mesh, b, "b")
    if r.shape != b.shape:
        raise FieldMismatchError("r and b have different shapes")
    return get_convolution_service(mesh, spec, ConvolutionMode(mode)).apply(np.column_stack([r, b]))
