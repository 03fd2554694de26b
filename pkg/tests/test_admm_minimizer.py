"""
Unit tests for the ADMM minimizer.
"""

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from src.processors.admm_minimizer import (
    TRACE_COLUMNS,
    AdmmSettings,
    AdmmState,
    BoxProjection,
    admm_run,
    admm_step,
    block1_objective,
    block2_objective,
    check_feasibility,
    initial_state,
    pg_solve,
    project_box,
    project_mass,
    random_initial,
)
from src.services.diagnostics import stationarity_signs
from src.services.energy import (
    ModelParams,
    confinement_energy,
    first_variation_residual,
    potential_field,
    total_energy,
)
from src.services.mesh import build_interval_mesh, integrate, l2_norm
from src.utils.errors import ConstraintViolationError, DivergenceError, DomainError

SMALL = build_interval_mesh(-1.0, 1.0, 21)
values = arrays(np.float64, 21, elements=st.floats(-2.0, 2.0))


def _state(mesh, rng, mu=1.0, delta=1e-6):
    n = mesh.n_nodes
    return AdmmState(
        r1=rng.uniform(0.1, 0.4, n), b1=rng.uniform(0.1, 0.4, n),
        r2=rng.uniform(0.0, 0.5, n), b2=rng.uniform(0.0, 0.5, n),
        lam_r=rng.normal(0.0, 0.1, n), lam_b=rng.normal(0.0, 0.1, n),
        mu=mu, delta=delta
    )


class TestProjections:
    """Test cases for the mass and box projections."""

    def test_mass_projection(self, interval_mesh, rng):
        """Projected fields carry the target masses."""
        params = ModelParams(m_r=0.4, m_b=0.2)
        r, b = project_mass(interval_mesh, rng.random(101), rng.random(101), params)
        assert integrate(interval_mesh, r) == pytest.approx(0.4, abs=1e-13)
        assert integrate(interval_mesh, b) == pytest.approx(0.2, abs=1e-13)

    @given(values, values, st.sampled_from([0.0, 1e-6, 0.01, 0.2]), st.sampled_from(list(BoxProjection)))
    def test_box_projection_feasible(self, r, b, delta, variant):
        """Both variants land in the tightened box."""
        p_r, p_b = project_box(SMALL, r, b, delta, variant)
        assert np.all(p_r >= delta - 1e-12)
        assert np.all(p_b >= delta - 1e-12)
        assert np.all(p_r + p_b <= 1.0 - delta + 1e-12)

    @given(values, values)
    def test_exact_projection_idempotent(self, r, b):
        """Projecting twice changes nothing."""
        once = project_box(SMALL, r, b, 0.01)
        twice = project_box(SMALL, *once, 0.01)
        np.testing.assert_allclose(twice[0], once[0], atol=1e-12)
        np.testing.assert_allclose(twice[1], once[1], atol=1e-12)

    def test_exact_projection_values(self):
        """Corner, edge and hypotenuse cases."""
        mesh = build_interval_mesh(0.0, 1.0, 4)
        r = np.array([1.0, -1.0, 2.0, 0.2])
        b = np.array([1.0, 0.3, -1.0, 0.3])
        p_r, p_b = project_box(mesh, r, b, 0.0)
        np.testing.assert_allclose(p_r, [0.5, 0.0, 1.0, 0.2])
        np.testing.assert_allclose(p_b, [0.5, 0.3, 0.0, 0.3])

    @pytest.mark.parametrize("delta", [0.0, 0.01])
    def test_exact_projection_is_metric(self, rng, delta):
        """<p - Pp, q - Pp> <= 0 for every feasible q (obtuse-angle criterion)."""
        mesh = build_interval_mesh(0.0, 1.0, 1000)
        r = rng.normal(0.3, 1.0, 1000)
        b = rng.normal(0.3, 1.0, 1000)
        p_r, p_b = project_box(mesh, r, b, delta)

        for _ in range(5):
            u, v = rng.uniform(size=1000), rng.uniform(size=1000)
            outside = u + v > 1.0
            u[outside], v[outside] = 1.0 - u[outside], 1.0 - v[outside]
            q_r = delta + (1.0 - 3.0 * delta) * u
            q_b = delta + (1.0 - 3.0 * delta) * v
            angle = (r - p_r) * (q_r - p_r) + (b - p_b) * (q_b - p_b)
            assert np.max(angle) <= 1e-12

    def test_invalid_delta(self):
        """delta must stay below 1/2."""
        with pytest.raises(ValueError):
            project_box(SMALL, np.zeros(21), np.zeros(21), 0.6)


class TestGradients:
    """Test cases for the block gradients."""

    @pytest.fixture
    def params(self):
        """Diffusive interacting parameters."""
        return ModelParams(epsilon=0.1, c11=-1.0, c22=-1.5)

    @pytest.mark.parametrize("block", [1, 2])
    def test_directional_derivative(self, params, rng, block):
        """<g, d>_W matches central differences of the objective."""
        state = _state(SMALL, rng, mu=2.0)
        objective = (block1_objective if block == 1 else block2_objective)(SMALL, state, params)
        r = rng.uniform(0.1, 0.4, 21)
        b = rng.uniform(0.1, 0.4, 21)
        d_r, d_b = rng.normal(size=21), rng.normal(size=21)
        step = 1e-6
        plus, _ = objective(r + step * d_r, b + step * d_b)
        minus, _ = objective(r - step * d_r, b - step * d_b)
        _, (g_r, g_b) = objective(r, b)
        analytic = SMALL.lumped_mass @ (g_r * d_r + g_b * d_b)
        assert (plus - minus) / (2 * step) == pytest.approx(analytic, rel=1e-6, abs=1e-8)

    def test_block1_has_no_potential(self, rng):
        """V enters the block-2 gradient only."""
        state = _state(SMALL, rng)
        with_v = ModelParams(epsilon=0.1, kernel=None, potential=True)
        without_v = ModelParams(epsilon=0.1, kernel=None, potential=False)
        g_with = block1_objective(SMALL, state, with_v)(state.r1, state.b1)[1]
        g_without = block1_objective(SMALL, state, without_v)(state.r1, state.b1)[1]
        np.testing.assert_array_equal(g_with[0], g_without[0])
        g2_with = block2_objective(SMALL, state, with_v)(state.r2, state.b2)[1]
        g2_without = block2_objective(SMALL, state, without_v)(state.r2, state.b2)[1]
        np.testing.assert_allclose(g2_with[0] - g2_without[0], potential_field(SMALL))


class TestBlockSolves:
    """Test cases for the projected-gradient block solves."""

    def test_block2_matches_kkt_solution(self, rng):
        """The mass-constrained quadratic block reaches its KKT point."""
        mesh = build_interval_mesh(-1.0, 1.0, 11)
        n = mesh.n_nodes
        params = ModelParams(c11=-0.4, c22=-0.4, m_r=0.3, m_b=0.5)
        state = _state(mesh, rng, mu=50.0)
        state.r2, state.b2 = project_mass(mesh, state.r2, state.b2, params)

        w = mesh.lumped_mass
        W = np.diag(w)
        x = mesh.x
        gram = -0.5 * np.abs(x[:, None] - x[None, :])
        wk = W @ gram @ W
        factor = params.interaction_factor
        hessian = factor * np.block([[params.c11 * wk, -wk], [-wk, params.c22 * wk]])
        hessian += state.mu * np.diag(np.concatenate([w, w]))
        V = potential_field(mesh, params)
        linear = np.concatenate([
            w * V - w * state.lam_r - state.mu * w * state.r1,
            w * V - w * state.lam_b - state.mu * w * state.b1,
        ])
        constraints = np.zeros((2 * n, 2))
        constraints[:n, 0] = w
        constraints[n:, 1] = w
        kkt = np.block([[hessian, constraints], [constraints.T, np.zeros((2, 2))]])
        solution = np.linalg.solve(kkt, np.concatenate([-linear, [params.m_r, params.m_b]]))

        settings = AdmmSettings(mu=50.0, inner_iters=5000, inner_tol=1e-11)
        r, b, info = pg_solve(mesh, 2, state, params, settings)
        np.testing.assert_allclose(r, solution[:n], atol=1e-7)
        np.testing.assert_allclose(b, solution[n:2 * n], atol=1e-7)
        assert info.pg_norm <= 1e-9

    def test_block1_stays_in_box(self, rng):
        """Block-1 iterates remain feasible and decrease L."""
        params = ModelParams(epsilon=0.1, c11=-1.0, c22=-1.5)
        settings = AdmmSettings(delta=1e-3)
        state = _state(SMALL, rng, delta=1e-3)
        start, _ = block1_objective(SMALL, state, params)(state.r1, state.b1)
        r, b, info = pg_solve(SMALL, 1, state, params, settings)
        assert np.all(r >= 1e-3 - 1e-12) and np.all(b >= 1e-3 - 1e-12)
        assert np.all(r + b <= 1.0 - 1e-3 + 1e-12)
        assert info.value <= start

    def test_unknown_block(self, rng):
        """Only blocks 1 and 2 exist."""
        with pytest.raises(ValueError):
            pg_solve(SMALL, 3, _state(SMALL, rng), ModelParams(), AdmmSettings())


class TestAdmmIteration:
    """Test cases for outer iterations."""

    @pytest.fixture
    def params(self):
        """Moderate attraction, diffusive."""
        return ModelParams(epsilon=0.05, c11=-1.0, c22=-1.5)

    def test_step_keeps_invariants(self, coarse_interval_mesh, params):
        """One step keeps block 1 in the box and block 2 on the masses."""
        settings = AdmmSettings()
        r0, b0 = random_initial(coarse_interval_mesh, params, seed=3)
        state = initial_state(coarse_interval_mesh, r0, b0, params, settings)
        before = state.copy()
        new = admm_step(coarse_interval_mesh, state, params, settings)
        check_feasibility(coarse_interval_mesh, new, params)
        assert new.iteration == 1
        np.testing.assert_array_equal(state.r1, before.r1)
        np.testing.assert_allclose(new.lam_r, state.lam_r + new.mu * (new.r1 - new.r2))

    def test_feasibility_violation(self, coarse_interval_mesh, params, rng):
        """A block-1 field outside the box is reported."""
        state = _state(coarse_interval_mesh, rng)
        state.r1[4] = -0.5
        with pytest.raises(ConstraintViolationError) as info:
            check_feasibility(coarse_interval_mesh, state, params)
        assert info.value.node == 4

    def test_settings_validation(self):
        """Nonpositive penalties are rejected."""
        with pytest.raises(ValueError):
            AdmmSettings(mu=0.0)
        with pytest.raises(ValueError):
            AdmmSettings(delta=0.5)


class TestAdmmRun:
    """Test cases for complete ADMM runs."""

    def test_confinement_only(self, coarse_interval_mesh):
        """Without interaction all mass moves into the flat well of V."""
        params = ModelParams(kernel=None, m_r=1.0 / 3.0, m_b=1.0 / 3.0)
        r0, b0 = random_initial(coarse_interval_mesh, params, seed=0)
        start = confinement_energy(coarse_interval_mesh, r0, b0)
        result = admm_run(coarse_interval_mesh, r0, b0, params, AdmmSettings(max_outer=300, tol=1e-7))
        assert result.energy.confinement < 0.05 * start
        assert integrate(coarse_interval_mesh, result.r) == pytest.approx(1.0 / 3.0, abs=1e-10)
        assert integrate(coarse_interval_mesh, result.b) == pytest.approx(1.0 / 3.0, abs=1e-10)

    def test_trace_and_determinism(self, coarse_interval_mesh):
        """Two runs from the same seed agree exactly."""
        params = ModelParams(epsilon=0.05, c11=-1.0, c22=-1.5)
        settings = AdmmSettings(mu=5.0, max_outer=20)
        results = []
        for _ in range(2):
            r0, b0 = random_initial(coarse_interval_mesh, params, seed=11)
            results.append(admm_run(coarse_interval_mesh, r0, b0, params, settings, seed=11))
        first, second = results
        np.testing.assert_array_equal(first.r, second.r)
        np.testing.assert_array_equal(first.b, second.b)
        assert list(first.trace.columns) == TRACE_COLUMNS
        assert len(first.trace) == first.iterations
        assert first.seed == 11

    def test_energy_below_initial(self, coarse_interval_mesh):
        """The minimizer improves on the uniform state of equal mass."""
        params = ModelParams(epsilon=0.05, c11=-1.0, c22=-1.5)
        r0, b0 = random_initial(coarse_interval_mesh, params, seed=5)
        uniform = np.full(coarse_interval_mesh.n_nodes, 1.0 / 6.0)
        start = total_energy(coarse_interval_mesh, uniform, uniform, params).total
        result = admm_run(coarse_interval_mesh, r0, b0, params, AdmmSettings(mu=5.0, max_outer=200))
        assert result.energy.total < start

    def test_infeasible_masses(self, coarse_interval_mesh):
        """Masses exceeding the domain are rejected."""
        params = ModelParams(m_r=1.5, m_b=1.0)
        zeros = np.zeros(coarse_interval_mesh.n_nodes)
        with pytest.raises(DomainError):
            admm_run(coarse_interval_mesh, zeros, zeros, params)

    def test_random_initial(self, coarse_interval_mesh):
        """Seeded draws are reproducible and carry the masses."""
        params = ModelParams(m_r=0.2, m_b=0.3)
        first = random_initial(coarse_interval_mesh, params, seed=7, tilt_r=True)
        second = random_initial(coarse_interval_mesh, params, seed=7, tilt_r=True)
        np.testing.assert_array_equal(first[0], second[0])
        assert integrate(coarse_interval_mesh, first[0]) == pytest.approx(0.2, abs=1e-13)
        assert integrate(coarse_interval_mesh, first[1]) == pytest.approx(0.3, abs=1e-13)

    @pytest.mark.slow
    def test_minimizer_satisfies_first_variation(self):
        """A converged diffusive minimizer has a nearly constant residual."""
        mesh = build_interval_mesh(-1.0, 1.0, 201)
        params = ModelParams(epsilon=0.1, c11=-1.0, c22=-1.5)
        r0, b0 = random_initial(mesh, params, seed=0)
        settings = AdmmSettings(mu=5.0, max_outer=2000, tol=1e-8, delta=1e-8)
        result = admm_run(mesh, r0, b0, params, settings)
        assert result.converged
        residual = first_variation_residual(mesh, result.r, result.b, params, bound_tol=1e-6)
        spread = np.nanmax(residual.res_r) - np.nanmin(residual.res_r)
        assert residual.dev_r < 1e-2 * max(spread, 1.0)
        assert stationarity_signs(mesh, result.r, result.b, params).violations == 0

    def test_species_symmetry(self, coarse_interval_mesh):
        """Exchanging the species and their parameters exchanges the minimizer."""
        params = ModelParams(epsilon=0.1, c11=-1.0, c22=-1.5, m_r=0.3, m_b=0.2)
        settings = AdmmSettings(mu=5.0, max_outer=1000, tol=1e-9)
        r0, b0 = random_initial(coarse_interval_mesh, params, seed=2)

        result = admm_run(coarse_interval_mesh, r0, b0, params, settings)
        swapped = admm_run(coarse_interval_mesh, b0, r0, params.mirrored(), settings)

        assert l2_norm(coarse_interval_mesh, result.r - swapped.b) <= 1e-6
        assert l2_norm(coarse_interval_mesh, result.b - swapped.r) <= 1e-6
        assert result.energy.total == pytest.approx(swapped.energy.total, abs=1e-8)

    def test_energy_settles_after_burn_in(self, interval_mesh):
        """Sharp segregation at mu = 5: the energy trace stops increasing."""
        params = ModelParams(c11=-1.0, c22=-0.5)
        r0, b0 = random_initial(interval_mesh, params, seed=0)
        result = admm_run(interval_mesh, r0, b0, params, AdmmSettings(mu=5.0, max_outer=400))

        burn_in = min(100, len(result.trace) // 2)
        tail = result.trace["total"].to_numpy()[burn_in:]
        assert np.all(np.diff(tail) <= 1e-8)

    def test_divergence_reported(self, interval_mesh):
        """A penalty below the interaction strength makes block 2 unbounded."""
        params = ModelParams(c11=-1.0, c22=-0.5)
        r0, b0 = random_initial(interval_mesh, params, seed=0)
        with pytest.raises(DivergenceError, match="increase mu") as info:
            admm_run(interval_mesh, r0, b0, params, AdmmSettings(mu=0.2, max_outer=200))

        assert 1 <= info.value.iterations <= 200
        assert "ADMM diverged at iteration" in str(info.value)
