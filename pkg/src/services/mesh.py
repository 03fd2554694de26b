"""
Mesh and P1 finite-element machinery.

Provides 1D interval and 2D disc meshes, consistent P1 mass and stiffness
assembly, quadrature-consistent integration of nodal fields, element
gradients and the plain-text mesh exchange format.
"""

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp

from src.utils.errors import FieldMismatchError, MeshError
from src.utils.logger import get_logger
from src.utils.sparse_utils import SparseSystem

logger = get_logger(__name__)

# Nodal scalar field: one real value per mesh node.
Field = npt.NDArray[np.float64]

DEGENERACY_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    Simplicial mesh of a 1D interval or a 2D polygonal domain.

    Attributes:
        dimension: Spatial dimension (1 or 2)
        nodes: Node coordinates, shape (n_nodes, dimension)
        elements: Node indices per element, shape (n_elements, dimension + 1)
        boundary: Boolean flag per node, True on the domain boundary
    """

    dimension: int
    nodes: np.ndarray
    elements: np.ndarray
    boundary: np.ndarray

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise MeshError(f"Unsupported mesh dimension: {self.dimension}")

        nodes = np.array(self.nodes, dtype=float).reshape(-1, self.dimension)
        elements = np.array(self.elements, dtype=np.int64).reshape(-1, self.dimension + 1)
        boundary = np.array(self.boundary, dtype=bool).reshape(-1)

        for array in (nodes, elements, boundary):
            array.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "boundary", boundary)

        self._validate()

    def _validate(self) -> None:
        """Check the mesh invariants."""
        n_nodes = self.nodes.shape[0]

        if n_nodes < self.dimension + 1 or self.elements.shape[0] == 0:
            raise MeshError("Mesh needs at least one element")
        if not np.all(np.isfinite(self.nodes)):
            raise MeshError("Node coordinates must be finite")
        if self.boundary.shape[0] != n_nodes:
            raise MeshError(
                f"Boundary flags ({self.boundary.shape[0]}) do not match node count ({n_nodes})"
            )

        bad = np.flatnonzero((self.elements < 0) | (self.elements >= n_nodes))
        if bad.size:
            raise MeshError("Element references a missing node", element=int(bad[0] // (self.dimension + 1)))

        volumes = self.signed_volumes
        threshold = DEGENERACY_RTOL * self.h ** self.dimension
        degenerate = np.flatnonzero(volumes <= threshold)
        if degenerate.size:
            raise MeshError(
                f"Degenerate or negatively oriented element (volume={volumes[degenerate[0]]:.3e})",
                element=int(degenerate[0])
            )

        expected = self._topological_boundary()
        if not np.array_equal(expected, self.boundary):
            mismatch = int(np.flatnonzero(expected != self.boundary)[0])
            raise MeshError(f"Boundary flags do not match the mesh boundary at node {mismatch}")

    def _topological_boundary(self) -> np.ndarray:
        """Nodes on facets that belong to exactly one element."""
        facets = self._facets()
        sorted_facets = np.sort(facets, axis=1)
        unique, counts = np.unique(sorted_facets, axis=0, return_counts=True)
        flags = np.zeros(self.n_nodes, dtype=bool)
        flags[unique[counts == 1].ravel()] = True
        return flags

    def _facets(self) -> np.ndarray:
        """All element facets (points in 1D, edges in 2D), with repetitions."""
        if self.dimension == 1:
            return self.elements.reshape(-1, 1)
        e = self.elements
        return np.vstack([e[:, [0, 1]], e[:, [1, 2]], e[:, [2, 0]]])

    # Basic sizes
    @property
    def n_nodes(self) -> int:
        """Number of nodes."""
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        """Number of elements."""
        return self.elements.shape[0]

    @property
    def x(self) -> np.ndarray:
        """First coordinate of every node."""
        return self.nodes[:, 0]

    # Geometry
    @cached_property
    def signed_volumes(self) -> np.ndarray:
        """Signed element lengths (1D) or areas (2D)."""
        p = self.nodes[self.elements]
        if self.dimension == 1:
            return p[:, 1, 0] - p[:, 0, 0]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1])

    @property
    def volumes(self) -> np.ndarray:
        """Element lengths (1D) or areas (2D)."""
        return self.signed_volumes

    @cached_property
    def h(self) -> float:
        """Characteristic mesh size: the largest element diameter."""
        edges = self.edges
        lengths = np.linalg.norm(self.nodes[edges[:, 1]] - self.nodes[edges[:, 0]], axis=1)
        return float(lengths.max())

    @cached_property
    def measure(self) -> float:
        """Measure |Omega_h| of the meshed domain."""
        return float(self.volumes.sum())

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique mesh edges as sorted node index pairs."""
        if self.dimension == 1:
            pairs = self.elements
        else:
            e = self.elements
            pairs = np.vstack([e[:, [0, 1]], e[:, [1, 2]], e[:, [2, 0]]])
        return np.unique(np.sort(pairs, axis=1), axis=0)

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """
        Gradients of the P1 basis functions per element.

        Returns:
            Array of shape (n_elements, dimension + 1, dimension)
        """
        p = self.nodes[self.elements]
        if self.dimension == 1:
            inv_len = 1.0 / self.volumes
            return np.stack([-inv_len, inv_len], axis=1)[:, :, None]

        x, y = p[:, :, 0], p[:, :, 1]
        two_area = 2.0 * self.volumes
        grads = np.empty((self.n_elements, 3, 2))
        grads[:, 0, 0] = y[:, 1] - y[:, 2]
        grads[:, 1, 0] = y[:, 2] - y[:, 0]
        grads[:, 2, 0] = y[:, 0] - y[:, 1]
        grads[:, 0, 1] = x[:, 2] - x[:, 1]
        grads[:, 1, 1] = x[:, 0] - x[:, 2]
        grads[:, 2, 1] = x[:, 1] - x[:, 0]
        return grads / two_area[:, None, None]

    @cached_property
    def local_stiffness(self) -> np.ndarray:
        """Element stiffness matrices, shape (n_elements, k, k)."""
        g = self.basis_gradients
        return self.volumes[:, None, None] * np.einsum("eid,ejd->eij", g, g)

    @cached_property
    def local_mass(self) -> np.ndarray:
        """Consistent element mass matrices, shape (n_elements, k, k)."""
        k = self.dimension + 1
        template = (np.ones((k, k)) + np.eye(k)) / ((k) * (k + 1))
        return self.volumes[:, None, None] * template[None, :, :]

    @cached_property
    def _assembly_index(self) -> Tuple[np.ndarray, np.ndarray]:
        k = self.dimension + 1
        rows = np.repeat(self.elements, k, axis=1).ravel()
        cols = np.tile(self.elements, (1, k)).ravel()
        return rows, cols

    def assemble(self, local: np.ndarray, symmetric: bool = True) -> SparseSystem:
        """
        Assemble element matrices into a global sparse system.

        Args:
            local: Element matrices, shape (n_elements, k, k)
            symmetric: Symmetry flag of the result

        Returns:
            Assembled SparseSystem
        """
        rows, cols = self._assembly_index
        return SparseSystem.from_triplets(rows, cols, local.ravel(), self.n_nodes, symmetric)

    @cached_property
    def mass(self) -> SparseSystem:
        """Consistent P1 mass matrix."""
        return self.assemble(self.local_mass)

    @cached_property
    def stiffness(self) -> SparseSystem:
        """P1 stiffness matrix."""
        return self.assemble(self.local_stiffness)

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        """Row sums of the consistent mass matrix (nodal quadrature weights)."""
        weights = np.asarray(self.mass.matrix.sum(axis=1)).ravel()
        weights.setflags(write=False)
        return weights

    @cached_property
    def _node_element_weights(self) -> sp.csr_matrix:
        k = self.dimension + 1
        rows = self.elements.ravel()
        cols = np.repeat(np.arange(self.n_elements), k)
        vals = np.repeat(self.volumes, k)
        incidence = sp.csr_matrix((vals, (rows, cols)), shape=(self.n_nodes, self.n_elements))
        totals = np.asarray(incidence.sum(axis=1)).ravel()
        return sp.diags(1.0 / totals) @ incidence

    def __repr__(self) -> str:
        return (
            f"Mesh(dimension={self.dimension}, n_nodes={self.n_nodes}, "
            f"n_elements={self.n_elements}, h={self.h:.4g})"
        )


def check_field(mesh: Mesh, values: np.ndarray, name: str = "field") -> np.ndarray:
    """
    Validate that values form a finite nodal field on mesh.

    Args:
        mesh: Mesh the field should live on
        values: Candidate nodal values
        name: Field name used in error messages

    Returns:
        The values as a float array

    Raises:
        FieldMismatchError: On length mismatch or non-finite values
    """
    array = np.asarray(values, dtype=float)
    if array.shape != (mesh.n_nodes,):
        raise FieldMismatchError(
            f"{name} has shape {array.shape}, mesh has {mesh.n_nodes} nodes"
        )
    if not np.all(np.isfinite(array)):
        node = int(np.flatnonzero(~np.isfinite(array))[0])
        raise FieldMismatchError(f"{name} is not finite at node {node}")
    return array


def build_interval_mesh(a: float, b: float, n_nodes: int) -> Mesh:
    """
    Build a uniform mesh of the interval [a, b].

    Args:
        a: Left endpoint
        b: Right endpoint
        n_nodes: Number of nodes (at least 2)

    Returns:
        1D Mesh with n_nodes - 1 elements and flagged endpoints

    Raises:
        MeshError: If a >= b or n_nodes < 2
    """
    if n_nodes < 2:
        raise MeshError(f"Interval mesh needs at least 2 nodes, got {n_nodes}")
    if not a < b:
        raise MeshError(f"Interval endpoints must satisfy a < b, got a={a}, b={b}")

    x = np.linspace(a, b, n_nodes)
    elements = np.column_stack([np.arange(n_nodes - 1), np.arange(1, n_nodes)])
    boundary = np.zeros(n_nodes, dtype=bool)
    boundary[[0, -1]] = True

    mesh = Mesh(dimension=1, nodes=x[:, None], elements=elements, boundary=boundary)
    logger.debug(f"Built interval mesh: {mesh}")
    return mesh


def build_disc_mesh(radius: float, h_target: float) -> Mesh:
    """
    Triangulate a polygon inscribed in the disc of given radius.

    Nodes are placed on concentric rings (ring k carries 6k nodes); adjacent
    rings are stitched by walking both rings in angular order, giving a
    deterministic node and element ordering.

    Args:
        radius: Disc radius
        h_target: Target mesh size, 0 < h_target < radius

    Returns:
        2D Mesh whose boundary nodes lie on the circle

    Raises:
        MeshError: On nonpositive inputs or h_target >= radius
    """
    if not radius > 0 or not h_target > 0:
        raise MeshError(f"Disc mesh needs positive radius and size, got {radius}, {h_target}")
    if not h_target < radius:
        raise MeshError(f"Disc mesh size {h_target} must be smaller than the radius {radius}")

    n_rings = int(math.ceil(radius / h_target))
    coords: List[Tuple[float, float]] = [(0.0, 0.0)]
    rings: List[np.ndarray] = [np.array([0])]

    for k in range(1, n_rings + 1):
        r_k = radius * k / n_rings
        count = 6 * k
        angles = 2.0 * np.pi * np.arange(count) / count
        start = len(coords)
        coords.extend(zip(r_k * np.cos(angles), r_k * np.sin(angles)))
        rings.append(np.arange(start, start + count))

    nodes = np.array(coords)
    triangles: List[Tuple[int, int, int]] = []

    for inner, outer in zip(rings[:-1], rings[1:]):
        n_in, n_out = len(inner), len(outer)
        if n_in == 1:
            for j in range(n_out):
                triangles.append((int(inner[0]), int(outer[j]), int(outer[(j + 1) % n_out])))
            continue

        i = j = 0
        while i < n_in or j < n_out:
            next_in = (i + 1) / n_in if i < n_in else np.inf
            next_out = (j + 1) / n_out if j < n_out else np.inf
            if next_in < next_out:
                triangles.append((int(inner[i % n_in]), int(inner[(i + 1) % n_in]), int(outer[j % n_out])))
                i += 1
            else:
                triangles.append((int(inner[i % n_in]), int(outer[(j + 1) % n_out]), int(outer[j % n_out])))
                j += 1

    elements = np.array(triangles, dtype=np.int64)

    # Counter-clockwise orientation
    p = nodes[elements]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    negative = (d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1]) < 0
    elements[negative] = elements[negative][:, [0, 2, 1]]

    boundary = np.zeros(len(nodes), dtype=bool)
    boundary[rings[-1]] = True

    mesh = Mesh(dimension=2, nodes=nodes, elements=elements, boundary=boundary)
    logger.info(
        f"Built disc mesh: radius={radius}, h_target={h_target}, "
        f"{mesh.n_nodes} nodes, {mesh.n_elements} triangles, h={mesh.h:.4f}"
    )
    return mesh


def assemble_fem(mesh: Mesh) -> Tuple[SparseSystem, SparseSystem]:
    """
    Assemble the consistent P1 mass and stiffness matrices.

    Args:
        mesh: Valid mesh

    Returns:
        Tuple of (mass, stiffness) SparseSystems
    """
    logger.debug(f"Assembling P1 matrices on {mesh}")
    return mesh.mass, mesh.stiffness


def weighted_stiffness(mesh: Mesh, coefficient: np.ndarray) -> SparseSystem:
    """
    Assemble the stiffness matrix of -div(c grad .) for a nodal coefficient c.

    The coefficient is averaged over each element (one-point quadrature of
    the nodal interpolant).

    Args:
        mesh: Mesh
        coefficient: Nodal coefficient field

    Returns:
        Symmetric SparseSystem
    """
    c = check_field(mesh, coefficient, "coefficient")
    element_c = c[mesh.elements].mean(axis=1)
    return mesh.assemble(element_c[:, None, None] * mesh.local_stiffness)


def integrate(mesh: Mesh, f: np.ndarray) -> float:
    """
    Integrate a nodal field: one^T M f with the consistent mass matrix.

    Args:
        mesh: Mesh
        f: Nodal field

    Returns:
        Integral of the P1 interpolant of f
    """
    f = check_field(mesh, f, "f")
    return float(mesh.lumped_mass @ f)


def l2_norm(mesh: Mesh, f: np.ndarray) -> float:
    """L2 norm sqrt(f^T M f) of a nodal field."""
    f = check_field(mesh, f, "f")
    return float(np.sqrt(max(f @ (mesh.mass.matrix @ f), 0.0)))


def element_gradients(mesh: Mesh, f: np.ndarray) -> np.ndarray:
    """
    Constant gradient of the P1 interpolant on each element.

    Args:
        mesh: Mesh
        f: Nodal field

    Returns:
        Array of shape (n_elements, dimension)
    """
    f = check_field(mesh, f, "f")
    return np.einsum("ek,ekd->ed", f[mesh.elements], mesh.basis_gradients)


def nodal_average(mesh: Mesh, element_values: np.ndarray) -> np.ndarray:
    """
    Average element values back to nodes, weighted by element volume.

    Args:
        mesh: Mesh
        element_values: Array with leading dimension n_elements

    Returns:
        Array with leading dimension n_nodes
    """
    return np.asarray(mesh._node_element_weights @ element_values)


def save_mesh(mesh: Mesh, path: Union[str, Path]) -> Path:
    """
    Write a mesh in the plain-text exchange format.

    Header ``dim n_nodes n_elems``, then one line ``x [y] boundary_flag`` per
    node and one line of 0-based node indices per element.

    Args:
        mesh: Mesh to write
        path: Output file path

    Returns:
        Path of the written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    lines = [f"{mesh.dimension} {mesh.n_nodes} {mesh.n_elements}"]
    for coords, flag in zip(mesh.nodes, mesh.boundary):
        lines.append(" ".join(repr(float(c)) for c in coords) + f" {int(flag)}")
    for element in mesh.elements:
        lines.append(" ".join(str(int(i)) for i in element))

    path.write_text("\n".join(lines) + "\n")
    logger.debug(f"Saved mesh to: {path}")
    return path


def load_mesh(path: Union[str, Path]) -> Mesh:
    """
    Read a mesh written by save_mesh.

    Args:
        path: Mesh file path

    Returns:
        Validated Mesh

    Raises:
        MeshError: If the file is malformed or the mesh is invalid
    """
    path = Path(path)
    try:
        rows = [line.split() for line in path.read_text().splitlines() if line.strip()]
        dim, n_nodes, n_elems = (int(v) for v in rows[0])
        node_rows = np.array(rows[1:1 + n_nodes], dtype=float)
        element_rows = np.array(rows[1 + n_nodes:1 + n_nodes + n_elems], dtype=np.int64)
    except (OSError, ValueError, IndexError) as e:
        raise MeshError(f"Cannot read mesh file {path}: {e}")

    if node_rows.shape != (n_nodes, dim + 1) or element_rows.shape != (n_elems, dim + 1):
        raise MeshError(f"Mesh file {path} does not match its header")

    return Mesh(
        dimension=dim,
        nodes=node_rows[:, :dim],
        elements=element_rows,
        boundary=node_rows[:, dim].astype(bool)
    )
