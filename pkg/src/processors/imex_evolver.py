"""
IMEX P1 time stepper of the cross-diffusion gradient flow.

Each step solves one coupled linear system for (r, b): diffusion is
implicit with coefficients lagged at the previous step, the nonlocal and
confinement transport is explicit. No-flux boundary conditions are natural
in the weak form, and mass is conserved because every stiffness block
annihilates constants.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp

from src.config.config_manager import get_config
from src.processors.admm_minimizer import project_box
from src.services.energy import (
    ModelParams,
    interaction_potentials,
    potential_field,
    total_energy,
)
from src.services.mesh import Mesh, check_field, l2_norm, weighted_stiffness
from src.utils.errors import ConstraintViolationError
from src.utils.logger import get_logger
from src.utils.sparse_utils import SparseSystem, relative_residual, solve_sparse

logger = get_logger(__name__)

MASS_DRIFT_TOL = 1e-10
ENTROPY_SLACK = 1e-12
DEFAULT_SAMPLE_TIME = 19.0

TRACE_COLUMNS = [
    "t", "F_E", "F_0", "F_C", "total", "mass_r", "mass_b", "max_violation",
    "l2_r", "l2_b", "err", "residual", "mass_drift",
]


class ViolationPolicy(str, Enum):
    """Reaction to a box-constraint violation after a step."""

    ABORT = "abort"
    CLAMP = "clamp"
    WARN = "warn"


@dataclass(frozen=True)
class EvolveSettings:
    """Numerical settings of the time stepper."""

    tau: float = 5e-4
    t_end: float = 1.0
    stop_tol: float = 1e-12
    linear_tol: Optional[float] = None
    on_violation: ViolationPolicy = ViolationPolicy.ABORT
    violation_tol: float = 1e-8
    snapshot_every: Optional[int] = None
    snapshot_times: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "on_violation", ViolationPolicy(self.on_violation))
        object.__setattr__(self, "snapshot_times", tuple(sorted(self.snapshot_times)))
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.snapshot_every is not None and self.snapshot_every < 1:
            raise ValueError(f"snapshot_every must be positive, got {self.snapshot_every}")

    @property
    def resolved_linear_tol(self) -> float:
        """Linear tolerance, falling back to the environment default."""
        return self.linear_tol if self.linear_tol is not None else get_config().linear_tol


@dataclass
class State:
    """Time and densities of a trajectory."""

    t: float
    r: np.ndarray
    b: np.ndarray

    @property
    def rho(self) -> np.ndarray:
        """Total density r + b."""
        return self.r + self.b


@dataclass
class StepReport:
    """Per-step bookkeeping."""

    tau: float
    residual: float
    mass_drift: float
    violation: float
    energy: float
    clamped: bool = False


@dataclass
class Snapshot:
    """Stored fields at one time."""

    step: int
    t: float
    r: np.ndarray
    b: np.ndarray


@dataclass
class EvolveResult:
    """Outcome of an evolution run."""

    state: State
    trace: pd.DataFrame
    snapshots: List[Snapshot] = field(default_factory=list)
    steps: int = 0
    stopped: bool = False


def heaviside(s: Union[float, np.ndarray], gamma: float) -> np.ndarray:
    """Smoothed Heaviside 1/2 + atan(s / gamma) / pi."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return 0.5 + np.arctan(np.asarray(s, dtype=float) / gamma) / math.pi


def init_heaviside(
    mesh: Mesh,
    amplitude: float,
    halfwidth: float,
    gamma: float,
    centers: Sequence[Union[float, Sequence[float]]] = (0.0,)
) -> np.ndarray:
    """
    Smoothed indicator bumps: sum over centres c of amplitude * H(halfwidth - |x - c|).

    Args:
        mesh: Mesh
        amplitude: Bump height
        halfwidth: Bump radius
        gamma: Smoothing width (> 0)
        centers: Bump centres; scalars are placed on the first axis

    Returns:
        Nodal field

    Raises:
        ValueError: If gamma <= 0
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    values = np.zeros(mesh.n_nodes)
    for center in centers:
        point = np.zeros(mesh.dimension)
        coords = np.atleast_1d(np.asarray(center, dtype=float))
        point[:coords.size] = coords
        distance = np.linalg.norm(mesh.nodes - point, axis=1)
        values += amplitude * heaviside(halfwidth - distance, gamma)
    return values


def transport_potentials(
    mesh: Mesh,
    r: np.ndarray,
    b: np.ndarray,
    params: ModelParams
) -> Tuple[np.ndarray, np.ndarray]:
    """Transport potentials factor * S_r + V and factor * S_b + V."""
    s_r, s_b = interaction_potentials(mesh, r, b, params)
    V = potential_field(mesh, params)
    factor = params.interaction_factor
    return factor * s_r + V, factor * s_b + V


def assemble_imex(
    mesh: Mesh,
    state: State,
    params: ModelParams,
    tau: float
) -> Tuple[SparseSystem, np.ndarray]:
    """
    Assemble the coupled linear system of one IMEX step.

    [M + tau eps A(1-b),  tau eps A(r)        ] [r']   [M r - tau A(r(1-rho)) Phi_r    ]
    [tau eps D A(b),      M + tau eps D A(1-r)] [b'] = [M b - tau D A(b(1-rho)) Phi_b  ]

    with A(c) the stiffness matrix weighted by the nodal coefficient c and
    Phi the transport potentials.

    Returns:
        Tuple (system of dimension 2 n_nodes, right-hand side)

    Raises:
        ValueError: If tau <= 0
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    r = check_field(mesh, state.r, "r")
    b = check_field(mesh, state.b, "b")
    void = 1.0 - r - b
    mass = mesh.mass.matrix
    eps, D = params.epsilon, params.D

    if eps > 0:
        def a(coefficient):
            return weighted_stiffness(mesh, coefficient).matrix

        blocks = [
            [mass + tau * eps * a(1.0 - b), tau * eps * a(r)],
            [tau * eps * D * a(b), mass + tau * eps * D * a(1.0 - r)],
        ]
    else:
        blocks = [[mass, None], [None, mass]]
    system = SparseSystem(sp.bmat(blocks, format="csr"), symmetric=False)

    phi_r, phi_b = transport_potentials(mesh, r, b, params)
    rhs_r = mass @ r - tau * (weighted_stiffness(mesh, r * void).matrix @ phi_r)
    rhs_b = mass @ b - tau * D * (weighted_stiffness(mesh, b * void).matrix @ phi_b)
    return system, np.concatenate([rhs_r, rhs_b])


def _violation(r: np.ndarray, b: np.ndarray) -> Tuple[float, int]:
    excess = np.maximum.reduce([-r, -b, r + b - 1.0])
    node = int(np.argmax(excess))
    return max(float(excess[node]), 0.0), node


def step(
    mesh: Mesh,
    state: State,
    params: ModelParams,
    tau: float,
    settings: Optional[EvolveSettings] = None
) -> Tuple[State, StepReport]:
    """
    Advance the state by one IMEX step.

    Returns:
        Tuple (new State, StepReport)

    Raises:
        ConstraintViolationError: On mass drift, or on a box violation when
            the policy is 'abort'
        SolverConvergenceError: If the linear solve fails
    """
    settings = settings or EvolveSettings(tau=tau)
    tol = settings.resolved_linear_tol

    system, rhs = assemble_imex(mesh, state, params, tau)
    solution = solve_sparse(system, rhs, tol=tol)
    residual = relative_residual(system.matrix, solution, rhs)

    n = mesh.n_nodes
    r_new, b_new = solution[:n], solution[n:]
    t_new = state.t + tau

    w = mesh.lumped_mass
    mass_r, mass_b = float(w @ state.r), float(w @ state.b)
    drift = max(abs(w @ r_new - mass_r), abs(w @ b_new - mass_b))
    if drift > MASS_DRIFT_TOL * max(1.0, mass_r + mass_b):
        raise ConstraintViolationError("Mass drift in IMEX step", time=t_new, magnitude=drift)

    violation, node = _violation(r_new, b_new)
    clamped = False
    if violation > settings.violation_tol:
        if settings.on_violation is ViolationPolicy.ABORT:
            raise ConstraintViolationError(
                "Box constraint violated in IMEX step", node=node, time=t_new, magnitude=violation
            )
        if settings.on_violation is ViolationPolicy.CLAMP:
            r_new, b_new = project_box(mesh, r_new, b_new, 0.0)
            clamped = True
            logger.warning(
                f"Clamped box violation {violation:.3e} at node {node}, t={t_new:.6g}"
            )
        else:
            logger.warning(
                f"Box violation {violation:.3e} at node {node}, t={t_new:.6g}"
            )

    current = 0.0 if clamped else violation
    energy = total_energy(mesh, r_new, b_new, params, slack=max(ENTROPY_SLACK, 2.0 * current))

    report = StepReport(
        tau=tau,
        residual=residual,
        mass_drift=float(drift),
        violation=violation,
        energy=energy.total,
        clamped=clamped
    )
    return State(t=t_new, r=r_new, b=b_new), report


def _trace_row(mesh, state, params, err, residual, drift, violation):
    energy = total_energy(mesh, state.r, state.b, params, slack=max(ENTROPY_SLACK, 2.0 * violation))
    w = mesh.lumped_mass
    return {
        "t": state.t,
        **energy.to_dict(),
        "mass_r": float(w @ state.r),
        "mass_b": float(w @ state.b),
        "max_violation": violation,
        "l2_r": l2_norm(mesh, state.r),
        "l2_b": l2_norm(mesh, state.b),
        "err": err,
        "residual": residual,
        "mass_drift": drift,
    }


def _snapshot_due(settings: EvolveSettings, step_index: int, t: float, pending: List[float]) -> bool:
    due = settings.snapshot_every is not None and step_index % settings.snapshot_every == 0
    while pending and t >= pending[0] - 0.5 * settings.tau:
        pending.pop(0)
        due = True
    return due


def run(
    mesh: Mesh,
    state: State,
    params: ModelParams,
    settings: EvolveSettings,
    callback: Optional[Callable[[State, StepReport], None]] = None
) -> EvolveResult:
    """
    Evolve until t_end or until the update size drops below stop_tol.

    The update size is |r^n - r^(n-1)|_L2 + |b^n - b^(n-1)|_L2. The trace
    holds one row for the initial state and one per step.

    Args:
        mesh: Mesh
        state: Initial state
        params: Model parameters
        settings: Stepper settings
        callback: Optional hook called after every step

    Returns:
        EvolveResult with the final state, trace and snapshots

    Raises:
        ValueError: If t_end does not exceed the initial time
    """
    if not settings.t_end > state.t:
        raise ValueError(f"t_end ({settings.t_end}) must exceed the initial time ({state.t})")

    n_steps = int(math.ceil((settings.t_end - state.t) / settings.tau - 1e-9))
    initial_violation, _ = _violation(state.r, state.b)
    rows: List[Dict[str, float]] = [
        _trace_row(mesh, state, params, np.nan, 0.0, 0.0, initial_violation)
    ]
    pending = [t for t in settings.snapshot_times if t >= state.t - 0.5 * settings.tau]
    snapshots: List[Snapshot] = []
    if _snapshot_due(settings, 0, state.t, pending):
        snapshots.append(Snapshot(0, state.t, state.r.copy(), state.b.copy()))

    logger.info(
        f"Evolution started: eps={params.epsilon}, D={params.D}, c=({params.c11}, {params.c22}), "
        f"tau={settings.tau}, t_end={settings.t_end}, n={mesh.n_nodes}"
    )

    stopped = False
    steps_taken = 0
    for k in range(1, n_steps + 1):
        previous = state
        state, report = step(mesh, state, params, settings.tau, settings)
        steps_taken = k
        err = l2_norm(mesh, state.r - previous.r) + l2_norm(mesh, state.b - previous.b)
        rows.append(_trace_row(
            mesh, state, params, err, report.residual, report.mass_drift,
            0.0 if report.clamped else report.violation
        ))

        if callback is not None:
            callback(state, report)
        if _snapshot_due(settings, k, state.t, pending):
            snapshots.append(Snapshot(k, state.t, state.r.copy(), state.b.copy()))
        if k % 1000 == 0:
            logger.debug(f"Step {k}/{n_steps}: t={state.t:.6g}, err={err:.3e}, E={report.energy:.8g}")

        if err < settings.stop_tol:
            stopped = True
            logger.info(f"Stationary after {k} steps (t={state.t:.6g}, err={err:.3e})")
            break

    trace = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    logger.info(f"Evolution finished: {steps_taken} steps, t={state.t:.6g}")
    return EvolveResult(state=state, trace=trace, snapshots=snapshots, steps=steps_taken, stopped=stopped)


def epsilon_study(
    mesh: Mesh,
    r0: np.ndarray,
    b0: np.ndarray,
    params: ModelParams,
    epsilons: Sequence[float],
    settings: EvolveSettings,
    sample_time: float = DEFAULT_SAMPLE_TIME
) -> pd.DataFrame:
    """
    Steps to stationarity and update size at a sample time, per epsilon.

    Returns:
        DataFrame with columns epsilon, steps, stopped, t_final, err_at_sample
    """
    rows = []
    for eps in epsilons:
        run_params = replace(params, epsilon=float(eps))
        result = run(mesh, State(0.0, r0.copy(), b0.copy()), run_params, settings)
        trace = result.trace
        sampled = trace.iloc[1:]
        if len(sampled):
            idx = (sampled["t"] - sample_time).abs().idxmin()
            err_at_sample = float(sampled.loc[idx, "err"])
        else:
            err_at_sample = float("nan")
        rows.append({
            "epsilon": float(eps),
            "steps": result.steps,
            "stopped": result.stopped,
            "t_final": result.state.t,
            "err_at_sample": err_at_sample,
        })
        logger.info(f"epsilon={eps}: {result.steps} steps, stopped={result.stopped}")
    return pd.DataFrame(rows)
