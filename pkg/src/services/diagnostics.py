"""
Model-level diagnostics.

Overlap of the two species, the entropy-dissipation bound along evolution
traces, interface sign conditions of stationary states, and summaries of
overlap and distance sweeps.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import linregress

from src.services.energy import ModelParams, interaction_potentials, potential_field
from src.services.mesh import Mesh, check_field, integrate, l2_norm
from src.utils.logger import get_logger

logger = get_logger(__name__)

PHASE_THRESHOLD = 0.1
DISSIPATION_TOL = 1e-12

RED, BLUE, VOID, MIXED = "R", "B", "void", "mixed"


@dataclass
class DissipationReport:
    """Entropy-dissipation check along an evolution trace."""

    table: pd.DataFrame
    constant: float
    min_margin: float
    passed: bool

    @property
    def verdict(self) -> str:
        """One-line machine-readable verdict."""
        return format_verdict(
            "entropy_dissipation",
            self.passed,
            steps=len(self.table),
            C=self.constant,
            min_margin=self.min_margin
        )


@dataclass
class StationarityReport:
    """Interface sign conditions of a (candidate) stationary state."""

    table: pd.DataFrame
    threshold: float
    tolerance: float

    @property
    def interfaces(self) -> int:
        """Number of interface edges found."""
        return len(self.table)

    @property
    def violations(self) -> int:
        """Number of interface edges violating the sign condition."""
        return int(self.table["violation"].sum()) if len(self.table) else 0

    @property
    def unresolved(self) -> int:
        """Number of red-blue interface edges listed without verdict."""
        return int(self.table["unresolved"].sum()) if len(self.table) else 0

    @property
    def passed(self) -> bool:
        """True when no sign violation was found."""
        return self.violations == 0

    @property
    def verdict(self) -> str:
        """One-line machine-readable verdict."""
        return format_verdict(
            "stationarity",
            self.passed,
            interfaces=self.interfaces,
            violations=self.violations,
            unresolved=self.unresolved,
            threshold=self.threshold,
            tolerance=self.tolerance
        )


def format_verdict(name: str, passed: bool, **counts) -> str:
    """Format 'PASS|FAIL name key=value ...'."""
    parts = [f"{key}={value:.6g}" if isinstance(value, float) else f"{key}={value}"
             for key, value in counts.items()]
    return " ".join(["PASS" if passed else "FAIL", name] + parts)


def overlap(mesh: Mesh, r: np.ndarray, b: np.ndarray) -> float:
    """Integral of r * b."""
    r = check_field(mesh, r, "r")
    b = check_field(mesh, b, "b")
    return integrate(mesh, r * b)


def l2_distance(mesh: Mesh, f: np.ndarray, g: np.ndarray) -> float:
    """L2 norm of f - g."""
    f = check_field(mesh, f, "f")
    g = check_field(mesh, g, "g")
    return l2_norm(mesh, f - g)


def relative_l2_distance(mesh: Mesh, f: np.ndarray, reference: np.ndarray) -> float:
    """L2 distance of f to reference, relative to the norm of reference."""
    norm = l2_norm(mesh, reference)
    distance = l2_distance(mesh, f, reference)
    return distance / norm if norm > 0 else distance


def dissipation_constant(
    mesh: Mesh,
    r: np.ndarray,
    b: np.ndarray,
    params: ModelParams
) -> float:
    """
    Growth constant C of the diffusive energy eps F^E + F^C.

    Returns:
        factor^2 * (1/4 (-c11 |r| + |b|)^2 + D/4 (-c22 |b| + |r|)^2) with
        L2 norms, or 0 when the kernel is off
    """
    if params.kernel is None:
        return 0.0
    return _dissipation_constant(l2_norm(mesh, r), l2_norm(mesh, b), params)


def _dissipation_constant(norm_r, norm_b, params: ModelParams):
    factor = params.interaction_factor
    red = 0.25 * (-params.c11 * norm_r + norm_b) ** 2
    blue = 0.25 * params.D * (-params.c22 * norm_b + norm_r) ** 2
    return factor ** 2 * (red + blue)


def entropy_dissipation_report(
    trace: pd.DataFrame,
    params: ModelParams,
    tol: float = DISSIPATION_TOL
) -> DissipationReport:
    """
    Check (eps F^E + F^C)(t_n) <= (eps F^E + F^C)(t_0) + C t_n along a trace.

    C is evaluated from the L2 norms stored in the trace and maximized over
    the trajectory.

    Args:
        trace: Evolution trace with columns t, F_E, F_C, l2_r, l2_b
        params: Model parameters of the run
        tol: Margin tolerance relative to the energy scale

    Returns:
        DissipationReport with the margin at every step

    Raises:
        ValueError: If the trace lacks the required columns
    """
    required = ["t", "F_E", "F_C", "l2_r", "l2_b"]
    missing = [c for c in required if c not in trace.columns]
    if missing:
        raise ValueError(f"Trace lacks columns required for the dissipation report: {missing}")

    if params.kernel is None:
        constant = 0.0
    else:
        constant = float(np.max(_dissipation_constant(
            trace["l2_r"].to_numpy(), trace["l2_b"].to_numpy(), params
        )))

    diffusive = params.epsilon * trace["F_E"].to_numpy() + trace["F_C"].to_numpy()
    t = trace["t"].to_numpy()
    bound = diffusive[0] + constant * (t - t[0])
    margin = bound - diffusive
    scale = max(1.0, float(np.max(np.abs(diffusive))))

    table = pd.DataFrame({"t": t, "diffusive": diffusive, "bound": bound, "margin": margin})
    min_margin = float(margin.min())
    passed = bool(min_margin >= -tol * scale)

    if not passed:
        logger.warning(f"Entropy dissipation bound violated: min margin {min_margin:.3e}")
    return DissipationReport(table=table, constant=constant, min_margin=min_margin, passed=passed)


def classify_phases(r: np.ndarray, b: np.ndarray, threshold: float = PHASE_THRESHOLD) -> np.ndarray:
    """
    Classify nodes as red, blue, void or mixed.

    Returns:
        Array of phase labels
    """
    phases = np.full(r.shape, MIXED, dtype=object)
    phases[r + b < threshold] = VOID
    phases[np.abs(b - 1.0) < threshold] = BLUE
    phases[np.abs(r - 1.0) < threshold] = RED
    return phases


def stationarity_signs(
    mesh: Mesh,
    r: np.ndarray,
    b: np.ndarray,
    params: ModelParams,
    threshold: float = PHASE_THRESHOLD,
    tolerance: Optional[float] = None
) -> StationarityReport:
    """
    Check the interface sign conditions of a stationary state.

    Every mesh edge leaving a full phase (red or blue) is an interface. Mass
    just outside a full phase must be pulled back, so the outward one-sided
    derivative of the pulling field factor * S + V of that phase must not be
    negative beyond tolerance. Red-blue edges are listed as unresolved.

    Args:
        mesh: Mesh
        r: Red density
        b: Blue density
        params: Model parameters
        threshold: Phase classification threshold
        tolerance: Accepted negative slope (defaults to the mesh size h)

    Returns:
        StationarityReport (an empty table when no phases are found)
    """
    r = check_field(mesh, r, "r")
    b = check_field(mesh, b, "b")
    tolerance = mesh.h if tolerance is None else tolerance

    s_r, s_b = interaction_potentials(mesh, r, b, params)
    V = potential_field(mesh, params)
    pulling = {
        RED: params.interaction_factor * s_r + V,
        BLUE: params.interaction_factor * s_b + V,
    }
    phases = classify_phases(r, b, threshold)

    rows: List[Dict] = []
    for i, j in mesh.edges:
        phase_i, phase_j = phases[i], phases[j]
        if phase_i == phase_j:
            continue
        full = {phase_i, phase_j} & {RED, BLUE}
        if not full:
            continue

        if full == {RED, BLUE}:
            rows.append(_interface_row(i, j, phase_i, phase_j, "both", np.nan, False, True))
            continue

        inside, outside = (i, j) if phases[i] in full else (j, i)
        phase = phases[inside]
        distance = float(np.linalg.norm(mesh.nodes[outside] - mesh.nodes[inside]))
        field = pulling[phase]
        derivative = float((field[outside] - field[inside]) / distance)
        rows.append(_interface_row(
            inside, outside, phase, phases[outside], phase, derivative,
            derivative < -tolerance, False
        ))

    columns = [
        "node_inside", "node_outside", "phase_inside", "phase_outside",
        "species", "derivative", "violation", "unresolved",
    ]
    table = pd.DataFrame(rows, columns=columns)
    report = StationarityReport(table=table, threshold=threshold, tolerance=tolerance)
    logger.info(f"Stationarity check: {report.verdict}")
    return report


def _interface_row(inside, outside, phase_in, phase_out, species, derivative, violation, unresolved):
    return {
        "node_inside": int(inside),
        "node_outside": int(outside),
        "phase_inside": phase_in,
        "phase_outside": phase_out,
        "species": species,
        "derivative": derivative,
        "violation": bool(violation),
        "unresolved": bool(unresolved),
    }


def overlap_sweep_summary(
    epsilons: Sequence[float],
    overlaps: Sequence[float],
    fit_points: int = 3
) -> Dict[str, float]:
    """
    Summarize overlap as a function of epsilon.

    Args:
        epsilons: Increasing epsilon values
        overlaps: Overlap of the minimizer at each epsilon
        fit_points: Number of leading points used for the linear fit

    Returns:
        Dictionary with strictly_increasing, slope, intercept and r_squared
    """
    eps = np.asarray(epsilons, dtype=float)
    values = np.asarray(overlaps, dtype=float)
    if eps.shape != values.shape or eps.size < 2:
        raise ValueError("Need matching epsilon and overlap sequences of length >= 2")

    order = np.argsort(eps)
    eps, values = eps[order], values[order]
    increasing = bool(np.all(np.diff(values) > 0))

    n = min(fit_points, eps.size)
    if n >= 3:
        fit = linregress(eps[:n], values[:n])
        slope, intercept, r_squared = float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2)
    else:
        slope = float((values[1] - values[0]) / (eps[1] - eps[0]))
        intercept = float(values[0] - slope * eps[0])
        r_squared = 1.0

    return {
        "strictly_increasing": increasing,
        "slope": slope,
        "intercept": intercept,
        "r_squared": r_squared,
    }


def monotone_decreasing(values: Sequence[float]) -> bool:
    """True if values strictly decrease."""
    return bool(np.all(np.diff(np.asarray(values, dtype=float)) < 0))
