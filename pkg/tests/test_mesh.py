"""
Unit tests for meshes and P1 finite-element assembly.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.services.mesh import (
    Mesh,
    assemble_fem,
    build_disc_mesh,
    build_interval_mesh,
    check_field,
    element_gradients,
    integrate,
    l2_norm,
    load_mesh,
    nodal_average,
    save_mesh,
    weighted_stiffness,
)
from src.utils.errors import FieldMismatchError, MeshError


class TestIntervalMesh:
    """Test cases for 1D meshes."""

    def test_sizes(self, interval_mesh):
        """101 nodes give 100 elements of length 0.02."""
        assert interval_mesh.n_nodes == 101
        assert interval_mesh.n_elements == 100
        assert interval_mesh.h == pytest.approx(0.02)
        assert interval_mesh.measure == pytest.approx(2.0)
        assert interval_mesh.boundary.sum() == 2

    def test_invalid_arguments(self):
        """Reversed endpoints and too few nodes are rejected."""
        with pytest.raises(MeshError):
            build_interval_mesh(1.0, -1.0, 10)
        with pytest.raises(MeshError):
            build_interval_mesh(0.0, 1.0, 1)

    def test_arrays_are_read_only(self, interval_mesh):
        """Mesh arrays cannot be modified in place."""
        with pytest.raises(ValueError):
            interval_mesh.nodes[0, 0] = 5.0

    def test_degenerate_element(self):
        """Zero-length elements are reported with their index."""
        with pytest.raises(MeshError) as info:
            Mesh(
                dimension=1,
                nodes=np.array([0.0, 1.0, 1.0, 2.0]),
                elements=np.array([[0, 1], [1, 2], [2, 3]]),
                boundary=np.array([True, False, False, True])
            )
        assert info.value.element == 1

    def test_wrong_boundary_flags(self):
        """Boundary flags must match the topological boundary."""
        with pytest.raises(MeshError):
            Mesh(
                dimension=1,
                nodes=np.array([0.0, 0.5, 1.0]),
                elements=np.array([[0, 1], [1, 2]]),
                boundary=np.array([True, True, True])
            )

    def test_missing_node_reference(self):
        """Element indices must refer to existing nodes."""
        with pytest.raises(MeshError):
            Mesh(
                dimension=1,
                nodes=np.array([0.0, 1.0]),
                elements=np.array([[0, 2]]),
                boundary=np.array([True, True])
            )


class TestDiscMesh:
    """Test cases for 2D disc meshes."""

    def test_boundary_on_circle(self, disc_mesh):
        """Boundary nodes lie on the circle of radius 2."""
        radii = np.linalg.norm(disc_mesh.nodes[disc_mesh.boundary], axis=1)
        np.testing.assert_allclose(radii, 2.0)

    def test_area_approaches_disc(self):
        """The inscribed polygon area converges to 4 pi."""
        coarse = build_disc_mesh(2.0, 0.5).measure
        fine = build_disc_mesh(2.0, 0.1).measure
        assert coarse < fine < 4.0 * np.pi
        assert abs(fine - 4.0 * np.pi) < abs(coarse - 4.0 * np.pi)
        assert fine == pytest.approx(4.0 * np.pi, rel=5e-3)

    def test_positive_orientation(self, disc_mesh):
        """All triangles are counter-clockwise."""
        assert np.all(disc_mesh.signed_volumes > 0)

    def test_deterministic(self):
        """Two builds produce identical arrays."""
        a, b = build_disc_mesh(1.0, 0.25), build_disc_mesh(1.0, 0.25)
        np.testing.assert_array_equal(a.nodes, b.nodes)
        np.testing.assert_array_equal(a.elements, b.elements)

    def test_invalid_size(self):
        """The target size must be below the radius."""
        with pytest.raises(MeshError):
            build_disc_mesh(1.0, 1.5)


class TestAssembly:
    """Test cases for mass and stiffness assembly."""

    @pytest.fixture(params=["interval", "disc"])
    def mesh(self, request, interval_mesh, disc_mesh):
        """Both mesh kinds."""
        return interval_mesh if request.param == "interval" else disc_mesh

    def test_mass_sums_to_measure(self, mesh):
        """1^T M 1 equals the domain measure."""
        mass, _ = assemble_fem(mesh)
        ones = np.ones(mesh.n_nodes)
        assert ones @ (mass @ ones) == pytest.approx(mesh.measure, rel=1e-12)

    def test_stiffness_annihilates_constants(self, mesh):
        """Row sums of the stiffness matrix vanish."""
        _, stiffness = assemble_fem(mesh)
        np.testing.assert_allclose(stiffness @ np.ones(mesh.n_nodes), 0.0, atol=1e-10)

    def test_symmetric_positive(self, mesh):
        """M is SPD and A is symmetric positive semidefinite."""
        mass, stiffness = assemble_fem(mesh)
        assert mass.symmetric and stiffness.symmetric
        dense_a = stiffness.matrix.toarray()
        assert np.linalg.eigvalsh(mass.matrix.toarray()).min() > 0
        assert np.linalg.eigvalsh(dense_a).min() > -1e-10

    def test_stiffness_of_linear_function(self, mesh):
        """x^T A x equals the integral of |grad x|^2 = |Omega|."""
        _, stiffness = assemble_fem(mesh)
        x = mesh.x
        assert x @ (stiffness @ x) == pytest.approx(mesh.measure, rel=1e-12)

    def test_weighted_stiffness_constant_coefficient(self, mesh):
        """A coefficient of 3 scales the stiffness matrix by 3."""
        weighted = weighted_stiffness(mesh, 3.0 * np.ones(mesh.n_nodes))
        diff = weighted.matrix - 3.0 * mesh.stiffness.matrix
        assert abs(diff).max() < 1e-10

    def test_lumped_mass_matches_rows(self, mesh):
        """Lumped weights are the mass-matrix row sums."""
        rows = np.asarray(mesh.mass.matrix.sum(axis=1)).ravel()
        np.testing.assert_allclose(mesh.lumped_mass, rows)


class TestFieldOperations:
    """Test cases for integration, norms and gradients."""

    def test_integrate_linear(self, interval_mesh):
        """Linear functions are integrated exactly."""
        assert integrate(interval_mesh, 2.0 + interval_mesh.x) == pytest.approx(4.0)

    def test_l2_norm_constant(self, interval_mesh):
        """The L2 norm of 1 on [-1, 1] is sqrt(2)."""
        assert l2_norm(interval_mesh, np.ones(interval_mesh.n_nodes)) == pytest.approx(np.sqrt(2.0))

    def test_gradient_of_linear(self, disc_mesh):
        """Element gradients of 2x - y are (2, -1) everywhere."""
        f = 2.0 * disc_mesh.nodes[:, 0] - disc_mesh.nodes[:, 1]
        grads = element_gradients(disc_mesh, f)
        np.testing.assert_allclose(grads, np.tile([2.0, -1.0], (disc_mesh.n_elements, 1)), atol=1e-10)
        np.testing.assert_allclose(nodal_average(disc_mesh, grads)[:, 0], 2.0, atol=1e-10)

    def test_check_field_errors(self, interval_mesh):
        """Wrong shapes and NaN are rejected."""
        with pytest.raises(FieldMismatchError):
            check_field(interval_mesh, np.ones(5))
        values = np.ones(interval_mesh.n_nodes)
        values[7] = np.inf
        with pytest.raises(FieldMismatchError, match="node 7"):
            check_field(interval_mesh, values)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-3, 3), st.floats(-3, 3))
    def test_integrate_is_linear(self, alpha, beta):
        """integrate(alpha f + beta g) = alpha integrate(f) + beta integrate(g)."""
        mesh = build_interval_mesh(-1.0, 1.0, 21)
        f, g = np.cos(mesh.x), mesh.x ** 2
        combined = integrate(mesh, alpha * f + beta * g)
        expected = alpha * integrate(mesh, f) + beta * integrate(mesh, g)
        assert combined == pytest.approx(expected, abs=1e-12)


class TestMeshFiles:
    """Test cases for the mesh exchange format."""

    @pytest.mark.parametrize("kind", ["interval", "disc"])
    def test_save_and_load(self, tmp_path, kind, interval_mesh, disc_mesh):
        """A saved mesh loads back with identical arrays."""
        mesh = interval_mesh if kind == "interval" else disc_mesh
        loaded = load_mesh(save_mesh(mesh, tmp_path / "mesh.txt"))
        np.testing.assert_array_equal(loaded.nodes, mesh.nodes)
        np.testing.assert_array_equal(loaded.elements, mesh.elements)
        np.testing.assert_array_equal(loaded.boundary, mesh.boundary)

    def test_header_mismatch(self, tmp_path):
        """Files that disagree with their header are rejected."""
        path = tmp_path / "bad.txt"
        path.write_text("1 3 2\n0.0 1\n1.0 1\n0 1\n")
        with pytest.raises(MeshError):
            load_mesh(path)
