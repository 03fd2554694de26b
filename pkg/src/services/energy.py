"""
Energies and pointwise algebra of the two-species model.

Covers the entropic, interaction and confinement energies, the multi-well
potential W, entropy variables and their inversion, chemical potentials and
the first-variation residual used to certify minimizers.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy.special import softmax, xlogy

from src.services.kernel import (
    ConvolutionMode,
    KernelSpec,
    convolve_pair,
    default_mode,
)
from src.services.mesh import Mesh, check_field, integrate
from src.utils.errors import ConstraintViolationError, DomainError
from src.utils.logger import get_logger

logger = get_logger(__name__)

ENTROPY_SLACK = 1e-12
SIMPLEX_TOL = 1e-12
POTENTIAL_HALFWIDTH = 0.5


class InteractionGradient(str, Enum):
    """Scaling of the interaction first variation."""

    # 2(c11 K*r - K*b): derivative of the interaction energy
    EXACT = "exact"
    # c11 K*r - K*b, half the derivative
    HALVED = "halved"


@dataclass(frozen=True)
class ModelParams:
    """
    Physical parameters of the two-species model.

    Attributes:
        epsilon: Diffusivity scale (>= 0)
        D: Diffusivity ratio of the second species (> 0)
        c11: Red self-interaction strength (<= 0)
        c22: Blue self-interaction strength (<= 0)
        m_r: Target red mass (> 0)
        m_b: Target blue mass (> 0)
        kernel: Interaction kernel, or None to switch interactions off
        convolution: Convolution realization (None selects the default
            for the kernel dimension)
        potential: Whether the confining potential V is applied
        interaction_gradient: Scaling of the interaction first variation
    """

    epsilon: float = 0.0
    D: float = 1.0
    c11: float = -1.0
    c22: float = -1.0
    m_r: float = 1.0 / 3.0
    m_b: float = 1.0 / 3.0
    kernel: Optional[KernelSpec] = field(default_factory=KernelSpec)
    convolution: Optional[ConvolutionMode] = None
    potential: bool = True
    interaction_gradient: InteractionGradient = InteractionGradient.EXACT

    def __post_init__(self):
        object.__setattr__(
            self, "interaction_gradient", InteractionGradient(self.interaction_gradient)
        )
        if self.convolution is not None:
            object.__setattr__(self, "convolution", ConvolutionMode(self.convolution))

        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be nonnegative, got {self.epsilon}")
        if not self.D > 0:
            raise ValueError(f"D must be positive, got {self.D}")
        if self.c11 > 0 or self.c22 > 0:
            raise ValueError(f"c11 and c22 must be nonpositive, got ({self.c11}, {self.c22})")
        if not (self.m_r > 0 and self.m_b > 0):
            raise ValueError(f"Masses must be positive, got ({self.m_r}, {self.m_b})")

    @property
    def interaction_factor(self) -> float:
        """Factor multiplying c11 K*r - K*b in first variations (2 or 1)."""
        return 2.0 if self.interaction_gradient is InteractionGradient.EXACT else 1.0

    @property
    def convolution_mode(self) -> Optional[ConvolutionMode]:
        """Effective convolution realization, None when the kernel is off."""
        if self.kernel is None:
            return None
        return self.convolution or default_mode(self.kernel.dimension)

    def check_feasible(self, measure: float) -> None:
        """
        Check that the admissible set is nonempty on a domain of given measure.

        Raises:
            DomainError: If m_r + m_b exceeds the domain measure
        """
        if self.m_r + self.m_b > measure * (1.0 + 1e-12):
            raise DomainError(
                f"Masses m_r + m_b = {self.m_r + self.m_b:.6g} exceed |Omega| = {measure:.6g}"
            )

    def mirrored(self) -> "ModelParams":
        """Parameters with the roles of the two species exchanged."""
        return ModelParams(
            epsilon=self.epsilon,
            D=self.D,
            c11=self.c22,
            c22=self.c11,
            m_r=self.m_b,
            m_b=self.m_r,
            kernel=self.kernel,
            convolution=self.convolution,
            potential=self.potential,
            interaction_gradient=self.interaction_gradient
        )


@dataclass(frozen=True)
class EnergyBreakdown:
    """Separately tallied energy contributions."""

    entropic: float
    interaction: float
    confinement: float
    epsilon: float

    @property
    def total(self) -> float:
        """epsilon * F^E + F^0 + F^C."""
        return self.epsilon * self.entropic + self.interaction + self.confinement

    def to_dict(self) -> Dict[str, float]:
        """Flat dictionary with the trace column names."""
        return {
            "F_E": self.entropic,
            "F_0": self.interaction,
            "F_C": self.confinement,
            "total": self.total,
        }


class FirstVariationResidual(NamedTuple):
    """Residual fields of the first-variation identity and their spread."""

    res_r: np.ndarray
    res_b: np.ndarray
    dev_r: float
    dev_b: float


def potential_V(x: Union[float, np.ndarray]) -> np.ndarray:
    """
    Double-well confining potential in one coordinate.

    Args:
        x: Point(s)

    Returns:
        (x - 0.5)^2 for x > 0.5, (x + 0.5)^2 for x < -0.5, 0 otherwise
    """
    x = np.asarray(x, dtype=float)
    return np.where(
        x > POTENTIAL_HALFWIDTH,
        (x - POTENTIAL_HALFWIDTH) ** 2,
        np.where(x < -POTENTIAL_HALFWIDTH, (x + POTENTIAL_HALFWIDTH) ** 2, 0.0)
    )


def potential_field(mesh: Mesh, params: Optional[ModelParams] = None) -> np.ndarray:
    """
    Nodal confining potential on a mesh.

    In 2D the potential is applied radially in |x|. Returns zeros when
    params disables the potential.
    """
    if params is not None and not params.potential:
        return np.zeros(mesh.n_nodes)
    if mesh.dimension == 1:
        return potential_V(mesh.x)
    return potential_V(np.linalg.norm(mesh.nodes, axis=1))


def _check_simplex(r: np.ndarray, b: np.ndarray, slack: float) -> None:
    violation = np.maximum.reduce([-r, -b, r + b - 1.0])
    worst = int(np.argmax(violation))
    if violation[worst] > slack:
        raise ConstraintViolationError(
            "Densities leave the simplex 0 <= r, b, r + b <= 1",
            node=worst,
            magnitude=float(violation[worst])
        )


def entropy_energy(mesh: Mesh, r: np.ndarray, b: np.ndarray, slack: float = ENTROPY_SLACK) -> float:
    """
    Entropic energy with nodal quadrature and the convention 0 log 0 = 0.

    Args:
        mesh: Mesh
        r: Red density
        b: Blue density
        slack: Tolerated constraint violation (values are clipped into the
            simplex within this slack)

    Returns:
        Integral of r log r + b log b + (1 - rho) log(1 - rho)

    Raises:
        ConstraintViolationError: If the fields leave the simplex by more
            than slack
    """
    r = check_field(mesh, r, "r")
    b = check_field(mesh, b, "b")
    _check_simplex(r, b, slack)

    r = np.clip(r, 0.0, 1.0)
    b = np.clip(b, 0.0, 1.0)
    void = np.clip(1.0 - r - b, 0.0, 1.0)
    return integrate(mesh, xlogy(r, r) + xlogy(b, b) + xlogy(void, void))


def convolutions(
    mesh: Mesh,
    r: np.ndarray,
    b: np.ndarray,
    params: ModelParams
) -> Tuple[np.ndarray, np.ndarray]:
    """
    K*r and K*b for the configured kernel (zeros when the kernel is off).
    """
    if params.kernel is None:
        return np.zeros(mesh.n_nodes), np.zeros(mesh.n_nodes)
    both = convolve_pair(mesh, r, b, params.kernel, params.convolution_mode)
    return both[:, 0], both[:, 1]


def interaction_potentials(
    mesh: Mesh,
    r: np.ndarray,
    b: np.ndarray,
    params: ModelParams
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Interaction potentials S_r = c11 K*r - K*b and S_b = c22 K*b - K*r.
    """
    kr, kb = convolutions(mesh, r, b, params)
    return params.c11 * kr - kb, params.c22 * kb - kr


def interaction_energy(mesh: Mesh, r: np.ndarray, b: np.ndarray, params: ModelParams) -> float:
    """
    Nonlocal interaction energy.

    Returns:
        Integral of c11 r K*r - r K*b - b K*r + c22 b K*b
    """
    r = check_field(mesh, r, "r")
    b = check_field(mesh, b, "b")
    s_r, s_b = interaction_potentials(mesh, r, b, params)
    return integrate(mesh, r * s_r + b * s_b)


def confinement_energy(
    mesh: Mesh,
    r: np.ndarray,
    b: np.ndarray,
    potential: Optional[np.ndarray] = None
) -> float:
    """
    Confinement energy: the integral of (r + b) V.

    Args:
        mesh: Mesh
        r: Red density
        b: Blue density
        potential: Nodal V (defaults to the double-well potential on mesh)

    Returns:
        Confinement energy
    """
    r = check_field(mesh, r, "r")
    b = check_field(mesh, b, "b")
    if potential is None:
        potential = potential_field(mesh)
    return integrate(mesh, (r + b) * potential)


def total_energy(
    mesh: Mesh,
    r: np.ndarray,
    b: np.ndarray,
    params: ModelParams,
    slack: float = ENTROPY_SLACK
) -> EnergyBreakdown:
    """
    Evaluate all energy contributions.

    Args:
        mesh: Mesh
        r: Red density
        b: Blue density
        params: Model parameters
        slack: Constraint slack passed to entropy_energy

    Returns:
        EnergyBreakdown with total = epsilon * F^E + F^0 + F^C
    """
    return EnergyBreakdown(
        entropic=entropy_energy(mesh, r, b, slack=slack),
        interaction=interaction_energy(mesh, r, b, params),
        confinement=confinement_energy(mesh, r, b, potential_field(mesh, params)),
        epsilon=params.epsilon
    )


def _log_ratio(values: np.ndarray, void: np.ndarray) -> np.ndarray:
    return np.log(values) - np.log(void)


def multiwell_W(
    r: Union[float, np.ndarray],
    b: Union[float, np.ndarray],
    params: ModelParams
) -> np.ndarray:
    """
    Pointwise multi-well potential of the local (Cahn-Hilliard) form.

    Args:
        r: Red value(s) in the unit triangle
        b: Blue value(s) in the unit triangle
        params: Model parameters (epsilon, c11, c22)

    Returns:
        epsilon (r log r + b log b + (1-rho) log(1-rho))
        + c11/2 r^2 - r b + c22/2 b^2 - c11/2 r - c22/2 b

    Raises:
        DomainError: Outside the unit triangle
    """
    r = np.asarray(r, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(r < -SIMPLEX_TOL) or np.any(b < -SIMPLEX_TOL) or np.any(r + b > 1.0 + SIMPLEX_TOL):
        raise DomainError("multiwell_W is defined on the unit triangle only")

    void = np.clip(1.0 - r - b, 0.0, 1.0)
    entropy = xlogy(r, r) + xlogy(b, b) + xlogy(void, void)
    quadratic = (
        0.5 * params.c11 * r ** 2 - r * b + 0.5 * params.c22 * b ** 2
        - 0.5 * params.c11 * r - 0.5 * params.c22 * b
    )
    return params.epsilon * entropy + quadratic


def multiwell_gradient(
    r: Union[float, np.ndarray],
    b: Union[float, np.ndarray],
    params: ModelParams
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Partial derivatives of multiwell_W.

    Returns:
        Tuple (dW/dr, dW/db)

    Raises:
        DomainError: On the triangle boundary when epsilon > 0
    """
    r = np.asarray(r, dtype=float)
    b = np.asarray(b, dtype=float)
    d_r = params.c11 * r - b - 0.5 * params.c11
    d_b = params.c22 * b - r - 0.5 * params.c22
    if params.epsilon > 0:
        void = 1.0 - r - b
        if np.any(r <= 0) or np.any(b <= 0) or np.any(void <= 0):
            raise DomainError("multiwell_gradient needs strict interior values when epsilon > 0")
        d_r = d_r + params.epsilon * _log_ratio(r, void)
        d_b = d_b + params.epsilon * _log_ratio(b, void)
    return d_r, d_b


def entropy_vars(
    r: np.ndarray,
    b: np.ndarray,
    params: ModelParams,
    V: Union[float, np.ndarray] = 0.0
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Entropy variables u = eps (log r - log(1-rho)) + V and the analogue v.

    Raises:
        DomainError: Unless 0 < r, b and r + b < 1 strictly
    """
    r = np.asarray(r, dtype=float)
    b = np.asarray(b, dtype=float)
    void = 1.0 - r - b
    if np.any(r <= 0) or np.any(b <= 0) or np.any(void <= 0):
        raise DomainError("Entropy variables need 0 < r, b and r + b < 1")
    u = params.epsilon * _log_ratio(r, void) + V
    v = params.epsilon * _log_ratio(b, void) + V
    return u, v


def invert_entropy_vars(
    u: np.ndarray,
    v: np.ndarray,
    params: ModelParams,
    V: Union[float, np.ndarray] = 0.0
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Recover densities from entropy variables.

    Exponents are normalized by a max-shift (softmax over void, red and blue)
    so large arguments do not overflow.

    Raises:
        DomainError: If epsilon is zero or the inputs are not finite
    """
    if not params.epsilon > 0:
        raise DomainError("Entropy variables can only be inverted for epsilon > 0")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise DomainError("Entropy variables must be finite")

    a_r = (u - V) / params.epsilon
    a_b = (v - V) / params.epsilon
    weights = softmax(np.stack([np.zeros_like(a_r), a_r, a_b]), axis=0)
    return weights[1], weights[2]


def chemical_potentials(
    mesh: Mesh,
    r: np.ndarray,
    b: np.ndarray,
    params: ModelParams
) -> Tuple[np.ndarray, np.ndarray]:
    """
    First variations of the full energy.

    Returns:
        Tuple (u, v) with u = eps (log r - log(1-rho)) + factor S_r + V and
        the blue analogue; the entropic part is omitted when epsilon = 0
    """
    r = check_field(mesh, r, "r")
    b = check_field(mesh, b, "b")
    s_r, s_b = interaction_potentials(mesh, r, b, params)
    V = potential_field(mesh, params)
    u = params.interaction_factor * s_r + V
    v = params.interaction_factor * s_b + V
    if params.epsilon > 0:
        entropic_u, entropic_v = entropy_vars(r, b, params)
        u = u + entropic_u
        v = v + entropic_v
    return u, v


def _weighted_mean_std(values: np.ndarray, weights: np.ndarray) -> Tuple[float, float]:
    total = weights.sum()
    mean = float(weights @ values / total)
    variance = float(weights @ (values - mean) ** 2 / total)
    return mean, float(np.sqrt(max(variance, 0.0)))


def active_nodes(r: np.ndarray, b: np.ndarray, bound_tol: float = 0.0) -> np.ndarray:
    """Nodes strictly inside the simplex by more than bound_tol."""
    return (r > bound_tol) & (b > bound_tol) & (1.0 - r - b > bound_tol)


def first_variation_residual(
    mesh: Mesh,
    r: np.ndarray,
    b: np.ndarray,
    params: ModelParams,
    bound_tol: float = 0.0
) -> FirstVariationResidual:
    """
    Residual of the first-variation identity of a minimizer.

    At a minimizer with epsilon > 0 the fields
    res_r = eps (log r - log(1-rho)) + factor S_r + V (and res_b) are
    constant; dev_r and dev_b are their mass-weighted standard deviations
    over the active nodes.

    Args:
        mesh: Mesh
        r: Red density
        b: Blue density
        params: Model parameters
        bound_tol: Nodes within this distance of the simplex boundary are
            excluded from the deviation

    Returns:
        FirstVariationResidual (res_r, res_b, dev_r, dev_b); inactive nodes
        hold NaN in the residual fields
    """
    r = check_field(mesh, r, "r")
    b = check_field(mesh, b, "b")
    active = active_nodes(r, b, bound_tol)
    if not np.any(active):
        raise DomainError("No strict interior nodes to evaluate the first variation on")

    s_r, s_b = interaction_potentials(mesh, r, b, params)
    V = potential_field(mesh, params)
    res_r = np.full(mesh.n_nodes, np.nan)
    res_b = np.full(mesh.n_nodes, np.nan)
    entropic_r, entropic_b = entropy_vars(r[active], b[active], params)
    res_r[active] = entropic_r + params.interaction_factor * s_r[active] + V[active]
    res_b[active] = entropic_b + params.interaction_factor * s_b[active] + V[active]

    weights = np.asarray(mesh.lumped_mass)[active]
    _, dev_r = _weighted_mean_std(res_r[active], weights)
    _, dev_b = _weighted_mean_std(res_b[active], weights)
    excluded = int((~active).sum())
    if excluded:
        logger.debug(f"First variation: {excluded} nodes at the simplex boundary excluded")
    return FirstVariationResidual(res_r, res_b, dev_r, dev_b)


def fixed_point_map(
    mesh: Mesh,
    r: np.ndarray,
    b: np.ndarray,
    params: ModelParams,
    bound_tol: float = 0.0
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Explicit minimizer form evaluated at (r, b).

    Inverts eps (log r - log(1-rho)) + factor S_r + V = C1 (and the blue
    analogue) with C1, C2 the mass-weighted means of the residual. A
    minimizer is a fixed point of this map.

    Returns:
        Tuple (r_hat, b_hat)

    Raises:
        DomainError: If epsilon is zero
    """
    if not params.epsilon > 0:
        raise DomainError("The explicit minimizer form needs epsilon > 0")
    residual = first_variation_residual(mesh, r, b, params, bound_tol)
    active = np.isfinite(residual.res_r)
    weights = np.asarray(mesh.lumped_mass)[active]
    c1, _ = _weighted_mean_std(residual.res_r[active], weights)
    c2, _ = _weighted_mean_std(residual.res_b[active], weights)

    s_r, s_b = interaction_potentials(mesh, r, b, params)
    V = potential_field(mesh, params)
    u = c1 - params.interaction_factor * s_r - V
    v = c2 - params.interaction_factor * s_b - V
    return invert_entropy_vars(u, v, params)
