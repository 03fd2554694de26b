"""
ADMM minimizer of the energy over the admissible set.

The admissible set is split into a box part (0 <= r, b and r + b <= 1,
tightened by delta) and a mass part (prescribed integrals). Block 1 carries
the entropic energy on the box, block 2 the interaction and confinement
energies on the mass set; consensus is enforced by multipliers and a
quadratic penalty mu. The augmented Lagrangian is

    L(x1, x2, lam) = eps F^E(x1) + factor/2 F^0(x2) + F^C(x2)
                     + <lam, x1 - x2> + mu/2 |x1 - x2|^2

with the nodal-quadrature inner product, so that the block gradients below
are exact gradients in that metric. Each block is solved by projected
gradient with Armijo backtracking.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.services.energy import (
    EnergyBreakdown,
    ModelParams,
    interaction_potentials,
    potential_field,
    total_energy,
)
from src.services.mesh import Mesh, check_field, l2_norm
from src.utils.errors import (
    ConstraintViolationError,
    DivergenceError,
    FieldMismatchError,
    SolverConvergenceError,
)
from src.utils.logger import get_logger

logger = get_logger(__name__)

ARMIJO_SLOPE = 1e-4
MIN_STEP = 1e-16
BB_STEP_BOUNDS = (1e-10, 1e10)
MASS_TOL = 1e-10
BOX_TOL = 1e-12
BALANCE_RATIO = 10.0
DIVERGENCE_GROWTH = 1e3
LOG_FLOOR = 1e-300

TRACE_COLUMNS = ["iter", "F_E", "F_0", "F_C", "total", "primal_res_r", "primal_res_b"]


class BoxProjection(str, Enum):
    """Realization of the box projection."""

    EXACT = "exact"
    LINE = "line"


class StepRule(str, Enum):
    """Step-size rule of the inner projected-gradient solver."""

    FIXED = "fixed"
    BB = "bb"


@dataclass(frozen=True)
class AdmmSettings:
    """Numerical settings of the ADMM minimizer."""

    mu: float = 1.0
    delta: float = 1e-6
    inner_step: float = 0.01
    inner_iters: int = 200
    inner_tol: float = 1e-10
    backtracking: bool = True
    step_rule: StepRule = StepRule.BB
    box_projection: BoxProjection = BoxProjection.EXACT
    max_outer: int = 500
    tol: float = 1e-8
    residual_balancing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "step_rule", StepRule(self.step_rule))
        object.__setattr__(self, "box_projection", BoxProjection(self.box_projection))
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        _check_delta(self.delta)
        if not self.inner_step > 0:
            raise ValueError(f"inner_step must be positive, got {self.inner_step}")
        if self.inner_iters < 1 or self.max_outer < 1:
            raise ValueError("Iteration budgets must be positive")


@dataclass
class AdmmState:
    """
    Splitting state of the ADMM iteration.

    Attributes:
        r1, b1: Block-1 fields (box set)
        r2, b2: Block-2 fields (mass set)
        lam_r, lam_b: Multipliers
        mu: Penalty parameter
        delta: Box tightening
        iteration: Outer iteration counter
        primal_res_r, primal_res_b: L2 norms of r1 - r2 and b1 - b2
        dual_res: mu times the L2 change of the block-2 fields
    """

    r1: np.ndarray
    b1: np.ndarray
    r2: np.ndarray
    b2: np.ndarray
    lam_r: np.ndarray
    lam_b: np.ndarray
    mu: float
    delta: float
    iteration: int = 0
    primal_res_r: float = float("inf")
    primal_res_b: float = float("inf")
    dual_res: float = float("inf")

    def copy(self) -> "AdmmState":
        """Deep copy of the state."""
        return replace(
            self,
            r1=self.r1.copy(), b1=self.b1.copy(),
            r2=self.r2.copy(), b2=self.b2.copy(),
            lam_r=self.lam_r.copy(), lam_b=self.lam_b.copy()
        )

    @property
    def primal_residual(self) -> float:
        """Largest primal residual."""
        return max(self.primal_res_r, self.primal_res_b)


@dataclass
class PgInfo:
    """Outcome of one projected-gradient block solve."""

    iterations: int
    pg_norm: float
    value: float


@dataclass
class AdmmResult:
    """Result of an ADMM run."""

    r: np.ndarray
    b: np.ndarray
    energy: EnergyBreakdown
    trace: pd.DataFrame
    converged: bool
    iterations: int
    primal_res_r: float
    primal_res_b: float
    seed: Optional[int] = None
    state: Optional[AdmmState] = field(default=None, repr=False)


def _check_delta(delta: float) -> None:
    if not 0.0 <= delta <= 0.49:
        raise ValueError(f"delta must lie in [0, 0.49], got {delta}")


def project_mass(
    mesh: Mesh,
    r: np.ndarray,
    b: np.ndarray,
    params: ModelParams
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Project onto the mass set by subtracting constants.

    Returns:
        (r - (int r - m_r)/|Omega|, b - (int b - m_b)/|Omega|)
    """
    r = check_field(mesh, r, "r")
    b = check_field(mesh, b, "b")
    weights = mesh.lumped_mass
    shift_r = (weights @ r - params.m_r) / mesh.measure
    shift_b = (weights @ b - params.m_b) / mesh.measure
    return r - shift_r, b - shift_b


def _project_triangle(r: np.ndarray, b: np.ndarray, delta: float) -> Tuple[np.ndarray, np.ndarray]:
    """Nodewise Euclidean projection onto {delta <= r, delta <= b, r + b <= 1 - delta}."""
    side = 1.0 - 3.0 * delta
    p1 = np.maximum(r - delta, 0.0)
    p2 = np.maximum(b - delta, 0.0)

    on_edge = p1 + p2 > side
    if np.any(on_edge):
        q1, q2 = r[on_edge] - delta, b[on_edge] - delta
        shift = 0.5 * (q1 + q2 - side)
        q1 = np.clip(q1 - shift, 0.0, side)
        p1[on_edge] = q1
        p2[on_edge] = side - q1

    return p1 + delta, p2 + delta


def project_box(
    mesh: Mesh,
    r: np.ndarray,
    b: np.ndarray,
    delta: float,
    variant: BoxProjection = BoxProjection.EXACT
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Project nodewise onto the delta-tightened box set.

    Args:
        mesh: Mesh
        r: Red field
        b: Blue field
        delta: Tightening in [0, 0.49]
        variant: 'exact' metric projection, or 'line' for the closed-form
            map onto the line r + b = 1 - delta (followed by the exact
            projection so the result is always feasible)

    Returns:
        Projected (r, b)

    Raises:
        ValueError: On invalid delta
    """
    _check_delta(delta)
    r = check_field(mesh, r, "r")
    b = check_field(mesh, b, "b")

    if BoxProjection(variant) is BoxProjection.LINE:
        r_clamped = np.clip(r, delta, 1.0 - delta)
        b_clamped = np.clip(b, delta, 1.0 - delta)
        gap = b_clamped - r_clamped
        r = 0.5 * ((1.0 - delta) - gap)
        b = 0.5 * ((1.0 - delta) + gap)

    return _project_triangle(r, b, delta)


def _safe_log(values: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(values, LOG_FLOOR))


def _entropy_density(r: np.ndarray, b: np.ndarray) -> np.ndarray:
    void = 1.0 - r - b
    return r * _safe_log(r) + b * _safe_log(b) + void * _safe_log(void)


def grad_block1(
    mesh: Mesh,
    r: np.ndarray,
    b: np.ndarray,
    state: AdmmState,
    params: ModelParams
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gradient of L with respect to the block-1 fields.

    Returns:
        g_r = eps (log r - log(1-rho)) + lam_r + mu (r - r2) and the blue analogue
    """
    void = 1.0 - r - b
    g_r = state.lam_r + state.mu * (r - state.r2)
    g_b = state.lam_b + state.mu * (b - state.b2)
    if params.epsilon > 0:
        log_void = _safe_log(void)
        g_r = g_r + params.epsilon * (_safe_log(r) - log_void)
        g_b = g_b + params.epsilon * (_safe_log(b) - log_void)
    return g_r, g_b


def _block2_potentials(mesh, r, b, params):
    s_r, s_b = interaction_potentials(mesh, r, b, params)
    return s_r, s_b, potential_field(mesh, params)


def grad_block2(
    mesh: Mesh,
    r: np.ndarray,
    b: np.ndarray,
    state: AdmmState,
    params: ModelParams
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gradient of L with respect to the block-2 fields.

    Returns:
        g_r = factor (c11 K*r - K*b) + V - lam_r + mu (r - r1) and the blue
        analogue with c22
    """
    s_r, s_b, V = _block2_potentials(mesh, r, b, params)
    factor = params.interaction_factor
    g_r = factor * s_r + V - state.lam_r + state.mu * (r - state.r1)
    g_b = factor * s_b + V - state.lam_b + state.mu * (b - state.b1)
    return g_r, g_b


# Objective of one block: (r, b) -> (value, (g_r, g_b))
BlockObjective = Callable[[np.ndarray, np.ndarray], Tuple[float, Tuple[np.ndarray, np.ndarray]]]


def block1_objective(mesh: Mesh, state: AdmmState, params: ModelParams) -> BlockObjective:
    """Value and gradient of L in the block-1 fields."""
    w = mesh.lumped_mass

    def evaluate(r, b):
        value = w @ (
            state.lam_r * r + state.lam_b * b
            + 0.5 * state.mu * ((r - state.r2) ** 2 + (b - state.b2) ** 2)
        )
        if params.epsilon > 0:
            value += params.epsilon * (w @ _entropy_density(r, b))
        return float(value), grad_block1(mesh, r, b, state, params)

    return evaluate


def block2_objective(mesh: Mesh, state: AdmmState, params: ModelParams) -> BlockObjective:
    """Value and gradient of L in the block-2 fields, sharing one convolution."""
    w = mesh.lumped_mass
    factor = params.interaction_factor

    def evaluate(r, b):
        s_r, s_b, V = _block2_potentials(mesh, r, b, params)
        value = w @ (
            0.5 * factor * (r * s_r + b * s_b)
            + (r + b) * V
            - state.lam_r * r - state.lam_b * b
            + 0.5 * state.mu * ((r - state.r1) ** 2 + (b - state.b1) ** 2)
        )
        g_r = factor * s_r + V - state.lam_r + state.mu * (r - state.r1)
        g_b = factor * s_b + V - state.lam_b + state.mu * (b - state.b1)
        return float(value), (g_r, g_b)

    return evaluate


def augmented_lagrangian(mesh: Mesh, state: AdmmState, params: ModelParams) -> float:
    """Value of L at the current state (block-1 part plus the block-2 energies)."""
    w = mesh.lumped_mass
    value, _ = block1_objective(mesh, state, params)(state.r1, state.b1)
    s_r, s_b, V = _block2_potentials(mesh, state.r2, state.b2, params)
    value += float(w @ (
        0.5 * params.interaction_factor * (state.r2 * s_r + state.b2 * s_b)
        + (state.r2 + state.b2) * V
        - state.lam_r * state.r2 - state.lam_b * state.b2
    ))
    return value


def pg_solve(
    mesh: Mesh,
    block: int,
    state: AdmmState,
    params: ModelParams,
    settings: AdmmSettings
) -> Tuple[np.ndarray, np.ndarray, PgInfo]:
    """
    Projected-gradient solve of one ADMM block.

    Iterates x <- P(x - step * grad L(x)) with P the box projection (block 1)
    or the mass projection (block 2), until the projected-gradient norm
    |x - P(x - s grad)| / s at the configured step s falls below the inner
    tolerance or the iteration budget is spent. With backtracking the trial
    step is halved until the Armijo condition holds, so L never increases.

    Args:
        mesh: Mesh
        block: 1 or 2
        state: Current ADMM state (the other block and the multipliers are read)
        params: Model parameters
        settings: ADMM settings

    Returns:
        Tuple (r, b, PgInfo)

    Raises:
        ValueError: On an unknown block
        SolverConvergenceError: If the objective becomes non-finite
    """
    if block == 1:
        objective = block1_objective(mesh, state, params)
        r, b = state.r1, state.b1

        def project(x_r, x_b):
            return project_box(mesh, x_r, x_b, state.delta, settings.box_projection)
    elif block == 2:
        objective = block2_objective(mesh, state, params)
        r, b = state.r2, state.b2

        def project(x_r, x_b):
            return project_mass(mesh, x_r, x_b, params)
    else:
        raise ValueError(f"Unknown ADMM block: {block}")

    w = mesh.lumped_mass

    def inner(a, c):
        return float(w @ (a[0] * c[0] + a[1] * c[1]))

    base_step = settings.inner_step
    value, grad = objective(r, b)
    step = base_step
    pg_norm = np.inf
    iterations = 0

    for iterations in range(settings.inner_iters + 1):
        if not np.isfinite(value):
            raise SolverConvergenceError(
                f"Non-finite objective in ADMM block {block}", residual=float(value),
                iterations=iterations
            )

        candidate = project(r - base_step * grad[0], b - base_step * grad[1])
        diff = (r - candidate[0], b - candidate[1])
        pg_norm = np.sqrt(max(inner(diff, diff), 0.0)) / base_step
        if pg_norm <= settings.inner_tol or iterations == settings.inner_iters:
            break

        trial = step
        while True:
            r_new, b_new = project(r - trial * grad[0], b - trial * grad[1])
            value_new, grad_new = objective(r_new, b_new)
            decrease = inner(grad, (r_new - r, b_new - b))
            if not settings.backtracking:
                break
            if np.isfinite(value_new) and value_new <= value + ARMIJO_SLOPE * decrease:
                break
            trial *= 0.5
            if trial < MIN_STEP:
                logger.debug(f"Block {block}: backtracking stalled at iteration {iterations}")
                return r, b, PgInfo(iterations, pg_norm, value)

        s = (r_new - r, b_new - b)
        y = (grad_new[0] - grad[0], grad_new[1] - grad[1])
        r, b, value, grad = r_new, b_new, value_new, grad_new

        if settings.step_rule is StepRule.BB:
            sy = inner(s, y)
            step = inner(s, s) / sy if sy > 0 else base_step
            step = float(np.clip(step, *BB_STEP_BOUNDS))
        else:
            step = base_step

    return r, b, PgInfo(iterations, float(pg_norm), float(value))


def check_feasibility(mesh: Mesh, state: AdmmState, params: ModelParams) -> None:
    """
    Assert the feasibility invariants of an ADMM state.

    Raises:
        ConstraintViolationError: If block 1 leaves the box or block 2 misses
            the masses
    """
    d = state.delta
    violation = np.maximum.reduce([d - state.r1, d - state.b1, state.r1 + state.b1 - (1.0 - d)])
    node = int(np.argmax(violation))
    if violation[node] > BOX_TOL:
        raise ConstraintViolationError(
            f"Block-1 fields left the box at iteration {state.iteration}",
            node=node, magnitude=float(violation[node])
        )

    w = mesh.lumped_mass
    drift = max(abs(w @ state.r2 - params.m_r), abs(w @ state.b2 - params.m_b))
    # mass projection is exact up to round-off relative to the field size
    scale = max(
        1.0, params.m_r + params.m_b,
        float(np.max(np.abs(state.r2))), float(np.max(np.abs(state.b2)))
    )
    if drift > MASS_TOL * scale:
        raise ConstraintViolationError(
            f"Block-2 fields missed the masses at iteration {state.iteration}",
            magnitude=float(drift)
        )


def admm_step(
    mesh: Mesh,
    state: AdmmState,
    params: ModelParams,
    settings: AdmmSettings
) -> AdmmState:
    """
    One outer ADMM iteration.

    Block 1, then block 2 against the updated block-1 fields, then the
    multiplier updates lam += mu (x1 - x2).

    Returns:
        New AdmmState (the input is not modified)
    """
    new = state.copy()

    new.r1, new.b1, info1 = pg_solve(mesh, 1, new, params, settings)
    r2_old, b2_old = new.r2, new.b2
    new.r2, new.b2, info2 = pg_solve(mesh, 2, new, params, settings)

    new.lam_r = new.lam_r + new.mu * (new.r1 - new.r2)
    new.lam_b = new.lam_b + new.mu * (new.b1 - new.b2)
    new.iteration += 1
    new.primal_res_r = l2_norm(mesh, new.r1 - new.r2)
    new.primal_res_b = l2_norm(mesh, new.b1 - new.b2)
    new.dual_res = new.mu * np.hypot(l2_norm(mesh, new.r2 - r2_old), l2_norm(mesh, new.b2 - b2_old))

    logger.debug(
        f"ADMM iteration {new.iteration}: primal=({new.primal_res_r:.3e}, {new.primal_res_b:.3e}), "
        f"dual={new.dual_res:.3e}, inner=({info1.iterations}, {info2.iterations})"
    )

    if settings.residual_balancing:
        primal = np.hypot(new.primal_res_r, new.primal_res_b)
        if primal > BALANCE_RATIO * new.dual_res:
            new.mu *= 2.0
        elif new.dual_res > BALANCE_RATIO * primal:
            new.mu *= 0.5

    return new


def initial_state(
    mesh: Mesh,
    r0: np.ndarray,
    b0: np.ndarray,
    params: ModelParams,
    settings: AdmmSettings
) -> AdmmState:
    """Feasible starting state: mass-projected block 2, box-projected block 1, zero multipliers."""
    r2, b2 = project_mass(mesh, r0, b0, params)
    r1, b1 = project_box(mesh, r2, b2, settings.delta, settings.box_projection)
    zeros = np.zeros(mesh.n_nodes)
    return AdmmState(
        r1=r1, b1=b1, r2=r2, b2=b2,
        lam_r=zeros.copy(), lam_b=zeros.copy(),
        mu=settings.mu, delta=settings.delta
    )


def _output_fields(mesh, state, params):
    r, b = project_mass(mesh, state.r1, state.b1, params)
    shift = max(np.max(np.abs(r - state.r1)), np.max(np.abs(b - state.b1)))
    return r, b, max(1e-12, 2.0 * shift)


def admm_run(
    mesh: Mesh,
    r0: np.ndarray,
    b0: np.ndarray,
    params: ModelParams,
    settings: Optional[AdmmSettings] = None,
    seed: Optional[int] = None,
    callback: Optional[Callable[[AdmmState], None]] = None
) -> AdmmResult:
    """
    Minimize the energy over the admissible set by ADMM.

    Args:
        mesh: Mesh
        r0: Initial red field (projected onto the admissible set)
        b0: Initial blue field
        params: Model parameters
        settings: ADMM settings (defaults if None)
        seed: Seed that produced the initial data, recorded in the result
        callback: Optional hook called with the state after every iteration

    Returns:
        AdmmResult with the mass-corrected block-1 fields

    Raises:
        DivergenceError: If the primal residual becomes non-finite or grows
            by DIVERGENCE_GROWTH over its initial scale
    """
    settings = settings or AdmmSettings()
    params.check_feasible(mesh.measure)
    state = initial_state(mesh, r0, b0, params, settings)

    logger.info(
        f"ADMM started: eps={params.epsilon}, c=({params.c11}, {params.c22}), "
        f"masses=({params.m_r:.4g}, {params.m_b:.4g}), mu={settings.mu}, n={mesh.n_nodes}"
    )

    rows: List[Dict[str, float]] = []
    converged = False
    primal_scale = np.sqrt(mesh.measure)

    for _ in range(settings.max_outer):
        try:
            state = admm_step(mesh, state, params, settings)
        except (SolverConvergenceError, FieldMismatchError) as e:
            raise DivergenceError(state.iteration + 1, float("nan")) from e

        primal = state.primal_residual
        if state.iteration == 1:
            primal_scale = max(primal_scale, primal)
        if not np.isfinite(primal) or primal > DIVERGENCE_GROWTH * primal_scale:
            raise DivergenceError(state.iteration, primal)
        check_feasibility(mesh, state, params)

        r, b, slack = _output_fields(mesh, state, params)
        energy = total_energy(mesh, r, b, params, slack=slack)
        rows.append({
            "iter": state.iteration,
            **energy.to_dict(),
            "primal_res_r": state.primal_res_r,
            "primal_res_b": state.primal_res_b,
        })

        if callback is not None:
            callback(state)

        if state.primal_residual <= settings.tol:
            converged = True
            break

    r, b, slack = _output_fields(mesh, state, params)
    energy = total_energy(mesh, r, b, params, slack=slack)

    if converged:
        logger.info(
            f"ADMM converged after {state.iteration} iterations: total energy {energy.total:.8g}"
        )
    else:
        logger.warning(
            f"ADMM did not converge in {settings.max_outer} iterations: "
            f"primal residuals ({state.primal_res_r:.3e}, {state.primal_res_b:.3e})"
        )

    trace = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    trace["iter"] = trace["iter"].astype(int)
    return AdmmResult(
        r=r, b=b, energy=energy, trace=trace, converged=converged,
        iterations=state.iteration,
        primal_res_r=state.primal_res_r, primal_res_b=state.primal_res_b,
        seed=seed, state=state
    )


def random_initial(
    mesh: Mesh,
    params: ModelParams,
    seed: int,
    low: float = 0.0,
    high: float = 0.49,
    tilt_r: bool = False,
    tilt_b: bool = False
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Random initial data projected onto the mass set.

    Nodal values are drawn uniformly from [low, high] with a seeded
    generator; optional tilts multiply r by (0.3 x + 1) and b by (x + 1).

    Returns:
        Tuple (r, b)
    """
    rng = np.random.default_rng(seed)
    r = rng.uniform(low, high, mesh.n_nodes)
    b = rng.uniform(low, high, mesh.n_nodes)
    x = mesh.x
    if tilt_r:
        r = r * (0.3 * x + 1.0)
    if tilt_b:
        b = b * (x + 1.0)
    return project_mass(mesh, r, b, params)
