"""
Bundled run presets: the standard minimization, sweep and evolution experiments.

Each preset is a JSON-ready dictionary accepted by parse_spec. Additional
presets are read from *.json files in CROSSDIFF_PRESETS_DIR (the file stem
is the preset name).
"""

import copy
import json
from typing import Any, Dict, List, Optional

from src.config.config_manager import get_config
from src.config.run_spec import RunSpec, parse_spec
from src.utils.errors import ConfigError
from src.utils.logger import get_logger

logger = get_logger(__name__)

THIRD = 1.0 / 3.0
INTERVAL = {"kind": "interval", "a": -1.0, "b": 1.0, "n_nodes": 1000}
DISC = {"kind": "disc", "radius": 2.0, "h": 0.1}
OVERLAP_EPSILONS = [0.0, 0.001, 0.002, 0.003, 0.004, 0.005, 0.006, 0.01, 0.05, 0.1]


def _minimize(name, c11, c22, m_r=THIRD, m_b=THIRD, domain=None, epsilon=0.0, **init):
    domain = domain or INTERVAL
    return {
        "name": name,
        "mode": "minimize",
        "domain": dict(domain),
        "model": {
            "epsilon": epsilon,
            "c11": c11,
            "c22": c22,
            "m_r": m_r,
            "m_b": m_b,
            "kernel": {"kind": "coulomb"},
            "potential": domain["kind"] == "interval",
        },
        # block 2 is nonconvex at mu = 1 for the bundled interaction strengths
        "solver": {"mu": 5.0, "delta": 1e-6, "inner_step": 0.01, "max_outer": 2000, "tol": 1e-8},
        "init": {"kind": "random", "seed": 0, "low": 0.0, "high": 0.49, **init},
    }


def _evolve(
    name, c11, c22, epsilon, t_end, snapshot_times, centers, halfwidth,
    domain=None, tau=5e-4, on_violation="abort"
):
    domain = domain or INTERVAL
    return {
        "name": name,
        "mode": "evolve",
        "domain": dict(domain),
        "model": {
            "epsilon": epsilon,
            "D": 1.0,
            "c11": c11,
            "c22": c22,
            "kernel": {"kind": "coulomb"},
            "potential": domain["kind"] == "interval",
        },
        "solver": {
            "tau": tau,
            "t_end": t_end,
            "stop_tol": 1e-12,
            "snapshot_times": snapshot_times,
            "on_violation": on_violation,
        },
        "init": {
            "kind": "heaviside",
            "amplitude": THIRD,
            "halfwidth": halfwidth,
            "gamma": 0.001,
            "centers": centers,
        },
    }


def _sweep(name, values, reference=None):
    spec = _minimize(name, -1.0, -1.5)
    spec["mode"] = "sweep"
    spec["sweep"] = {"parameter": "model.epsilon", "values": values, "mode": "minimize"}
    if reference is not None:
        spec["sweep"]["reference"] = reference
    return spec


def _build_presets() -> Dict[str, Dict[str, Any]]:
    # consistent mass undershoots at steep fronts when tau * eps / h^2 < 1/6,
    # so the small-eps evolutions clamp and report instead of aborting
    presets = {
        "fig-epszero-1d-a": _minimize("fig-epszero-1d-a", -0.4, -0.5),
        "fig-epszero-1d-b": _minimize("fig-epszero-1d-b", -1.0, -0.5),
        "fig-epszero-1d-c": _minimize("fig-epszero-1d-c", -1.5, -2.0, m_r=0.2, m_b=0.3),
        "fig-asym-1d-a": _minimize("fig-asym-1d-a", -1.0, -2.0, tilt_r=True),
        "fig-asym-1d-b": _minimize("fig-asym-1d-b", -2.0, -1.0, tilt_r=True),
        "fig-asym-1d-c": _minimize("fig-asym-1d-c", -2.0, -1.0, tilt_b=True),
        "overlap-vs-eps": _sweep("overlap-vs-eps", OVERLAP_EPSILONS),
        "gamma-convergence": _sweep("gamma-convergence", [0.1, 0.05, 0.01], reference=0.0),
        "fig-epszero-2d-a": _minimize("fig-epszero-2d-a", -0.4, -0.5, domain=DISC),
        "fig-epszero-2d-b": _minimize("fig-epszero-2d-b", -1.0, -0.5, domain=DISC),
        "fig-epszero-2d-c": _minimize(
            "fig-epszero-2d-c", -1.0, -3.0, m_r=0.2, m_b=0.4, domain=DISC, tilt_r=True
        ),
        "fig-admm-2d-a": _minimize("fig-admm-2d-a", -2.0, -2.0, m_r=0.3, m_b=0.3, domain=DISC),
        "fig-admm-2d-b": _minimize("fig-admm-2d-b", -2.0, -2.0, m_r=0.15, m_b=0.3, domain=DISC),
        "fig-admm-2d-c": _minimize("fig-admm-2d-c", -2.0, -1.5, m_r=0.3, m_b=0.3, domain=DISC),
        "fig-admm-2d-d": _minimize("fig-admm-2d-d", -2.0, -1.5, m_r=0.2, m_b=0.3, domain=DISC),
        "mix-meet": _evolve(
            "mix-meet", -2.0, -0.5, 0.0002, 75.0, [5.0, 20.0, 50.0, 75.0],
            centers=[-0.6, 0.6], halfwidth=0.25, on_violation="clamp"
        ),
        "mix-meet-partial": _evolve(
            "mix-meet-partial", -1.0, -0.5, 0.0002, 100.0, [5.0, 20.0, 50.0, 100.0],
            centers=[-0.6, 0.6], halfwidth=0.25, on_violation="clamp"
        ),
    }

    eps_study = _evolve(
        "pde-eps-study", -1.0, -1.5, 0.01, 100.0, [19.0], centers=[0.0], halfwidth=0.5
    )
    eps_study["diagnostics"] = {"epsilon_study": [0.01, 0.02, 0.05, 0.1], "sample_time": 19.0}
    presets["pde-eps-study"] = eps_study

    pde_vs_admm = _evolve(
        "pde-vs-admm-2d", -1.0, -0.5, 0.02, 650.0, [50.0, 650.0],
        centers=[0.0], halfwidth=1.0, domain=DISC, tau=0.005, on_violation="clamp"
    )
    pde_vs_admm["init"]["gamma"] = 0.05
    pde_vs_admm["solver"]["stop_tol"] = 1e-10
    pde_vs_admm["solver"]["mu"] = 5.0
    pde_vs_admm["diagnostics"] = {"compare_minimizer": True}
    presets["pde-vs-admm-2d"] = pde_vs_admm
    return presets


BUNDLED_PRESETS: Dict[str, Dict[str, Any]] = _build_presets()


def _user_presets() -> Dict[str, Dict[str, Any]]:
    directory = get_config().presets_dir
    if directory is None or not directory.is_dir():
        return {}
    found = {}
    for path in sorted(directory.glob("*.json")):
        try:
            with open(path) as f:
                found[path.stem] = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.warning(f"Skipping unreadable preset {path}: {e}")
    return found


def list_presets() -> List[str]:
    """Names of all available presets, bundled first."""
    names = list(BUNDLED_PRESETS)
    names.extend(name for name in _user_presets() if name not in BUNDLED_PRESETS)
    return names


def get_preset(name: str) -> Dict[str, Any]:
    """
    JSON document of a preset.

    Raises:
        ConfigError: If no preset has this name
    """
    if name in BUNDLED_PRESETS:
        return copy.deepcopy(BUNDLED_PRESETS[name])
    user = _user_presets()
    if name in user:
        return user[name]
    raise ConfigError("preset", f"unknown preset '{name}'")


def load_preset(name: str, output_dir: Optional[str] = None) -> RunSpec:
    """Validated RunSpec of a preset, optionally redirected to output_dir."""
    data = get_preset(name)
    if output_dir is not None:
        data["output_dir"] = output_dir
    return parse_spec(data)
