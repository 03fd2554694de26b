"""
Experiment Runner for the cross-diffusion toolkit.

Turns a RunSpec into artifacts on disk: mesh, final fields, traces,
snapshots, diagnostic tables, a manifest sufficient to reproduce the run
and a one-line-per-check verdict file. Also re-verifies stored artifacts.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from src import __version__
from src.config.config_manager import get_config
from src.config.run_spec import RunSpec, parse_spec, spec_to_json, sweep_values
from src.processors.admm_minimizer import AdmmResult, admm_run, random_initial
from src.processors.imex_evolver import (
    EvolveResult,
    State,
    epsilon_study,
    init_heaviside,
    run as evolve_run,
)
from src.services.diagnostics import (
    entropy_dissipation_report,
    format_verdict,
    l2_distance,
    monotone_decreasing,
    overlap,
    overlap_sweep_summary,
    relative_l2_distance,
    stationarity_signs,
)
from src.services.energy import ModelParams, first_variation_residual
from src.services.mesh import Mesh, integrate, load_mesh, save_mesh
from src.utils.csv_utils import (
    content_hash,
    fields_frame,
    read_frame,
    read_json,
    write_frame,
    write_json,
)
from src.utils.errors import ConfigError, StageError
from src.utils.logger import get_logger, run_log

logger = get_logger(__name__)

ENERGY_BAND = 1e-8
MASS_TOL = 1e-8
BOX_TOL = 1e-8
STEP_DRIFT_TOL = 1e-10
ENERGY_CHECK_MIN_EPS = 1e-3
STATIONARITY_RATIO = 1e-3


@dataclass
class RunOutcome:
    """Result of one experiment run."""

    status: int
    directory: Path
    verdicts: List[str] = field(default_factory=list)
    summary: Dict[str, float] = field(default_factory=dict)


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Wrap failures of one experiment stage in StageError."""
    try:
        yield
    except (StageError, ConfigError):
        raise
    except Exception as e:
        logger.error(f"Stage '{name}' failed: {e}")
        raise StageError(name, e) from e


class ExperimentRunner:
    """
    Runs minimization, evolution and sweep experiments.

    Each run writes only inside its own directory, so sweep entries can run
    concurrently.
    """

    def __init__(self, threads: Optional[int] = None):
        """
        Initialize experiment runner.

        Args:
            threads: Sweep concurrency. If None, uses config setting.
        """
        self.config = get_config()
        self.threads = threads or self.config.threads
        logger.info(f"Experiment runner initialized (threads={self.threads})")

    def resolve_directory(self, spec: RunSpec, output_dir: Optional[Union[str, Path]] = None) -> Path:
        """Output directory: explicit argument, spec field, or RESULTS_DIR/<name>."""
        if output_dir is not None:
            return Path(output_dir)
        if spec.output_dir is not None:
            return Path(spec.output_dir)
        return self.config.results_dir / spec.name

    def run(
        self,
        spec: RunSpec,
        output_dir: Optional[Union[str, Path]] = None,
        progress_callback: Optional[Callable[[str, float], None]] = None
    ) -> RunOutcome:
        """
        Run an experiment and write its artifacts.

        Args:
            spec: Validated run specification
            output_dir: Overrides the output directory of the spec
            progress_callback: Optional callback(message, progress_percent)

        Returns:
            RunOutcome with status 0 and the verdict lines

        Raises:
            StageError: Naming the failing stage
        """
        directory = self.resolve_directory(spec, output_dir)
        directory.mkdir(parents=True, exist_ok=True)
        with run_log(directory / "run.log", self.config.log_level):
            return self._run(spec, directory, progress_callback)

    def _run(self, spec, directory, progress_callback) -> RunOutcome:
        start_time = time.time()

        def update_progress(message: str, percent: float):
            logger.info(f"[{spec.name}] [{percent:.0f}%] {message}")
            if progress_callback:
                progress_callback(message, percent)

        if spec.mode == "sweep":
            outcome = self._run_sweep(spec, directory, update_progress)
        else:
            update_progress("Building mesh", 0)
            with stage("mesh"):
                mesh = spec.domain.build_mesh()
                save_mesh(mesh, directory / "mesh.txt")

            update_progress("Preparing initial data", 5)
            with stage("init"):
                r0, b0, params = self.initial_data(spec, mesh)

            if spec.mode == "minimize":
                outcome = self._run_minimize(spec, mesh, params, r0, b0, directory, update_progress)
            else:
                outcome = self._run_evolve(spec, mesh, params, r0, b0, directory, update_progress)

        with stage("write"):
            (directory / "verdict.txt").write_text("\n".join(outcome.verdicts) + "\n")
        update_progress(f"Finished in {time.time() - start_time:.1f}s", 100)
        return outcome

    def initial_data(self, spec: RunSpec, mesh: Mesh) -> Tuple[np.ndarray, np.ndarray, ModelParams]:
        """
        Initial fields and the model parameters of a run.

        Evolution runs without configured masses take them from the
        initial data.

        Raises:
            ConfigError: If random initial data is requested without masses
        """
        init = spec.init
        model = spec.model
        dimension = spec.domain.dimension

        if init.kind == "random":
            if model.m_r is None or model.m_b is None:
                raise ConfigError("model.m_r", "random initial data needs target masses")
            params = model.to_params(dimension)
            params.check_feasible(mesh.measure)
            r, b = random_initial(
                mesh, params, seed=init.seed, low=init.low, high=init.high,
                tilt_r=init.tilt_r, tilt_b=init.tilt_b
            )
            return r, b, params

        if init.kind == "heaviside":
            r = init_heaviside(mesh, init.amplitude, init.halfwidth, init.gamma, init.centers)
            centers_b = init.centers_b if init.centers_b is not None else init.centers
            b = init_heaviside(mesh, init.amplitude, init.halfwidth, init.gamma, centers_b)
        else:
            frame = read_frame(init.path)
            if len(frame) != mesh.n_nodes:
                raise ConfigError("init.path", f"{len(frame)} rows for a mesh of {mesh.n_nodes} nodes")
            r, b = frame["r"].to_numpy(dtype=float), frame["b"].to_numpy(dtype=float)

        params = model.to_params(dimension, masses=(integrate(mesh, r), integrate(mesh, b)))
        return r, b, params

    def _run_minimize(self, spec, mesh, params, r0, b0, directory, update_progress) -> RunOutcome:
        update_progress("Running ADMM minimization", 10)
        with stage("minimize"):
            result = admm_run(mesh, r0, b0, params, spec.solver.to_admm(), seed=spec.init.seed)

        update_progress("Evaluating diagnostics", 80)
        with stage("diagnostics"):
            verdicts, summary = self._minimizer_diagnostics(spec, mesh, params, result, directory)

        update_progress("Writing artifacts", 90)
        with stage("write"):
            write_frame(fields_frame(mesh.nodes, r=result.r, b=result.b), directory / "fields_final.csv")
            write_frame(result.trace, directory / "trace.csv")
            self._write_manifest(spec, mesh, params, directory, {
                "energy": result.energy.to_dict(),
                "converged": result.converged,
                "iterations": result.iterations,
                "primal_res_r": result.primal_res_r,
                "primal_res_b": result.primal_res_b,
            }, verdicts)

        return RunOutcome(status=0, directory=directory, verdicts=verdicts, summary=summary)

    def _minimizer_diagnostics(self, spec, mesh, params, result: AdmmResult, directory):
        diagnostics_dir = directory / "diagnostics"
        summary = {
            "overlap": overlap(mesh, result.r, result.b),
            "total_energy": result.energy.total,
            "converged": float(result.converged),
            "iterations": float(result.iterations),
        }
        verdicts = [format_verdict(
            "admm_convergence", result.converged, iterations=result.iterations,
            primal_res_r=result.primal_res_r, primal_res_b=result.primal_res_b
        )]

        if params.epsilon > 0:
            residual = first_variation_residual(mesh, result.r, result.b, params, bound_tol=2 * spec.solver.delta)
            ranges = [_finite_range(residual.res_r), _finite_range(residual.res_b)]
            summary.update({"dev_r": residual.dev_r, "dev_b": residual.dev_b,
                            "range_r": ranges[0], "range_b": ranges[1]})
            ok = residual.dev_r <= STATIONARITY_RATIO * max(ranges[0], 1e-300) and \
                residual.dev_b <= STATIONARITY_RATIO * max(ranges[1], 1e-300)
            verdicts.append(format_verdict(
                "first_variation", ok, dev_r=residual.dev_r, dev_b=residual.dev_b
            ))
            write_frame(
                fields_frame(mesh.nodes, res_r=residual.res_r, res_b=residual.res_b),
                diagnostics_dir / "first_variation.csv"
            )

        report = stationarity_signs(
            mesh, result.r, result.b, params,
            threshold=spec.diagnostics.threshold, tolerance=spec.diagnostics.tolerance
        )
        write_frame(report.table, diagnostics_dir / "stationarity.csv")
        verdicts.append(report.verdict)
        summary["stationarity_violations"] = float(report.violations)

        write_frame(
            pd.DataFrame({"quantity": list(summary), "value": list(summary.values())}),
            diagnostics_dir / "summary.csv"
        )
        return verdicts, summary

    def _run_evolve(self, spec, mesh, params, r0, b0, directory, update_progress) -> RunOutcome:
        settings = spec.solver.to_evolve()
        update_progress("Running IMEX evolution", 10)
        with stage("evolve"):
            result = evolve_run(mesh, State(0.0, r0, b0), params, settings)

        update_progress("Evaluating diagnostics", 70)
        with stage("diagnostics"):
            verdicts, summary = self._evolution_diagnostics(spec, mesh, params, result, directory)
            if spec.diagnostics.epsilon_study:
                study = epsilon_study(
                    mesh, r0, b0, params, spec.diagnostics.epsilon_study, settings,
                    sample_time=spec.diagnostics.sample_time
                )
                write_frame(study, directory / "diagnostics" / "epsilon_study.csv")
            if spec.diagnostics.compare_minimizer:
                verdicts.append(self._compare_with_minimizer(spec, mesh, params, r0, b0, result, directory))

        update_progress("Writing artifacts", 90)
        with stage("write"):
            state = result.state
            write_frame(fields_frame(mesh.nodes, r=state.r, b=state.b), directory / "fields_final.csv")
            write_frame(result.trace, directory / "trace.csv")
            index = []
            for snapshot in result.snapshots:
                name = f"step_{snapshot.step:08d}.csv"
                write_frame(fields_frame(mesh.nodes, r=snapshot.r, b=snapshot.b), directory / "snapshots" / name)
                index.append({"step": snapshot.step, "t": snapshot.t, "file": name})
            if index:
                write_frame(pd.DataFrame(index), directory / "snapshots" / "index.csv")
            final = result.trace.iloc[-1]
            self._write_manifest(spec, mesh, params, directory, {
                "energy": {k: float(final[k]) for k in ("F_E", "F_0", "F_C", "total")},
                "steps": result.steps,
                "stopped": result.stopped,
                "t_final": state.t,
            }, verdicts)

        return RunOutcome(status=0, directory=directory, verdicts=verdicts, summary=summary)

    def _evolution_diagnostics(self, spec, mesh, params, result: EvolveResult, directory):
        diagnostics_dir = directory / "diagnostics"
        trace = result.trace
        verdicts = []

        drift = float(trace["mass_drift"].max())
        verdicts.append(format_verdict("mass_conservation", drift <= STEP_DRIFT_TOL, max_drift=drift))

        increase = _max_energy_increase(trace)
        if params.epsilon >= ENERGY_CHECK_MIN_EPS:
            verdicts.append(format_verdict("energy_decay", increase <= ENERGY_BAND, max_increase=increase))

        if params.epsilon > 0:
            report = entropy_dissipation_report(trace, params)
            write_frame(report.table, diagnostics_dir / "dissipation.csv")
            verdicts.append(report.verdict)

        stationarity = stationarity_signs(
            mesh, result.state.r, result.state.b, params,
            threshold=spec.diagnostics.threshold, tolerance=spec.diagnostics.tolerance
        )
        write_frame(stationarity.table, diagnostics_dir / "stationarity.csv")
        verdicts.append(stationarity.verdict)

        summary = {
            "overlap": overlap(mesh, result.state.r, result.state.b),
            "max_mass_drift": drift,
            "max_energy_increase": increase,
            "steps": float(result.steps),
        }
        write_frame(
            pd.DataFrame({"quantity": list(summary), "value": list(summary.values())}),
            diagnostics_dir / "summary.csv"
        )
        return verdicts, summary

    def _compare_with_minimizer(self, spec, mesh, params, r0, b0, result, directory) -> str:
        minimizer = admm_run(mesh, r0, b0, params, spec.solver.to_admm())
        state = result.state
        distance_r = relative_l2_distance(mesh, state.r, minimizer.r)
        distance_b = relative_l2_distance(mesh, state.b, minimizer.b)
        write_frame(
            fields_frame(mesh.nodes, r=minimizer.r, b=minimizer.b),
            directory / "diagnostics" / "minimizer_fields.csv"
        )
        write_frame(
            pd.DataFrame({"species": ["r", "b"], "relative_l2": [distance_r, distance_b]}),
            directory / "diagnostics" / "minimizer_comparison.csv"
        )
        return format_verdict(
            "minimizer_consistency", max(distance_r, distance_b) <= 0.05,
            relative_l2_r=distance_r, relative_l2_b=distance_b
        )

    def _run_sweep(self, spec: RunSpec, directory: Path, update_progress) -> RunOutcome:
        sweep = spec.sweep
        values = sweep_values(spec)
        key = sweep.parameter.split(".")[-1]
        children = []
        for value in values:
            child = spec.override(sweep.parameter, value)
            child = replace(child, mode=sweep.mode, sweep=None, name=f"{spec.name}/{key}={value}")
            children.append((value, child, directory / f"{key}_{value}"))

        update_progress(f"Running {len(children)} sweep entries on {self.threads} threads", 5)
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            futures = [pool.submit(self.run, child, path) for _, child, path in children]
            outcomes = [future.result() for future in futures]

        rows = []
        fields = {}
        for (value, _, path), outcome in zip(children, outcomes):
            frame = read_frame(path / "fields_final.csv")
            fields[value] = (frame["r"].to_numpy(), frame["b"].to_numpy())
            rows.append({sweep.parameter: value, **outcome.summary, "directory": path.name})

        mesh = load_mesh(children[0][2] / "mesh.txt")
        summary_frame = pd.DataFrame(rows)
        verdicts = []

        if sweep.reference is not None:
            ref_r, ref_b = fields[sweep.reference]
            summary_frame["l2_to_reference"] = [
                l2_distance(mesh, fields[v][0], ref_r) + l2_distance(mesh, fields[v][1], ref_b)
                for v in summary_frame[sweep.parameter]
            ]
            others = summary_frame[summary_frame[sweep.parameter] != sweep.reference]
            ordered = others.sort_values(sweep.parameter, ascending=False)
            verdicts.append(format_verdict(
                "reference_convergence", monotone_decreasing(ordered["l2_to_reference"]),
                entries=len(ordered)
            ))

        if sweep.parameter == "model.epsilon" and sweep.reference is None and len(values) >= 3:
            fit = overlap_sweep_summary(summary_frame[sweep.parameter], summary_frame["overlap"])
            verdicts.append(format_verdict(
                "overlap_monotone", fit["strictly_increasing"] and fit["r_squared"] >= 0.9,
                r_squared=fit["r_squared"], slope=fit["slope"]
            ))

        with stage("write"):
            write_frame(summary_frame, directory / "summary.csv")
            write_json({
                "name": spec.name,
                "mode": spec.mode,
                "spec": spec_to_json(spec),
                "spec_hash": content_hash(spec_to_json(spec)),
                "entries": [path.name for _, _, path in children],
                "verdicts": verdicts,
                "version": __version__,
            }, directory / "manifest.json")

        return RunOutcome(status=0, directory=directory, verdicts=verdicts)

    def _write_manifest(self, spec, mesh, params, directory, results, verdicts) -> None:
        document = spec_to_json(spec)
        write_json({
            "name": spec.name,
            "mode": spec.mode,
            "spec": document,
            "spec_hash": content_hash(document),
            "seed": spec.init.seed if spec.init.kind == "random" else None,
            "masses": {"m_r": params.m_r, "m_b": params.m_b},
            "mesh": {
                "dimension": mesh.dimension,
                "n_nodes": mesh.n_nodes,
                "n_elements": mesh.n_elements,
                "h": mesh.h,
                "measure": mesh.measure,
            },
            "convolution": None if params.convolution_mode is None else params.convolution_mode.value,
            "interaction_factor": params.interaction_factor,
            "results": results,
            "verdicts": verdicts,
            "version": __version__,
        }, directory / "manifest.json")


def _finite_range(values: np.ndarray) -> float:
    finite = values[np.isfinite(values)]
    return float(finite.max() - finite.min()) if finite.size else 0.0


def _max_energy_increase(trace: pd.DataFrame) -> float:
    totals = trace["total"].to_numpy()
    if totals.size < 2:
        return 0.0
    return float(max(np.max(np.diff(totals)), 0.0))


def run_experiment(spec: RunSpec, output_dir: Optional[Union[str, Path]] = None) -> RunOutcome:
    """Run spec with a default ExperimentRunner."""
    return ExperimentRunner().run(spec, output_dir)


@dataclass
class CheckReport:
    """Outcome of re-verifying an artifact directory."""

    directory: Path
    lines: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """True when no check failed."""
        return not any(line.startswith("FAIL") for line in self.lines)


def check_artifacts(directory: Union[str, Path]) -> CheckReport:
    """
    Re-verify the invariants of a stored run from its CSV files.

    Checks masses and box constraints of the final fields, per-step mass
    drift and (for evolution runs with epsilon >= 1e-3) energy decay.
    Sweep directories are checked entry by entry.

    Raises:
        ConfigError: If the directory holds no manifest
    """
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError("directory", f"no manifest.json in {directory}")

    manifest = read_json(manifest_path)
    report = CheckReport(directory=directory)

    if manifest["mode"] == "sweep":
        for entry in manifest["entries"]:
            child = check_artifacts(directory / entry)
            report.lines.extend(f"{line} entry={entry}" for line in child.lines)
        return report

    spec = parse_spec(manifest["spec"])
    mesh = load_mesh(directory / "mesh.txt")
    fields = read_frame(directory / "fields_final.csv")
    r, b = fields["r"].to_numpy(), fields["b"].to_numpy()
    masses = manifest["masses"]

    mass_error = max(abs(integrate(mesh, r) - masses["m_r"]), abs(integrate(mesh, b) - masses["m_b"]))
    report.lines.append(format_verdict("mass", mass_error <= MASS_TOL, error=mass_error))

    box = float(np.max(np.maximum.reduce([-r, -b, r + b - 1.0])))
    report.lines.append(format_verdict("box", box <= BOX_TOL, max_violation=max(box, 0.0)))

    if spec.mode == "evolve":
        trace = read_frame(directory / "trace.csv")
        drift = np.abs(np.diff(trace[["mass_r", "mass_b"]].to_numpy(), axis=0))
        max_drift = float(drift.max()) if drift.size else 0.0
        scale = max(1.0, float(trace["mass_r"].iloc[0] + trace["mass_b"].iloc[0]))
        report.lines.append(format_verdict(
            "step_mass_drift", max_drift <= STEP_DRIFT_TOL * scale, max_drift=max_drift
        ))
        if spec.model.epsilon >= ENERGY_CHECK_MIN_EPS:
            increase = _max_energy_increase(trace)
            report.lines.append(format_verdict("energy_decay", increase <= ENERGY_BAND, max_increase=increase))

    for line in report.lines:
        logger.info(f"check {directory.name}: {line}")
    return report
