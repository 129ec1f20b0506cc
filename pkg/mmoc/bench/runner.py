"""Benchmark runner: builds the context, drives the step graphs and writes the report."""

import json
import math
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from mmoc.bench.metrics import (
    CSV_COLUMNS,
    CycleReport,
    MetricRow,
    compute_flow_diagnostics,
    compute_metrics,
    detect_cycle,
    mass_functional,
)
from mmoc.bench.problems import Problem, build_problem
from mmoc.bench.reference import REFERENCE_VERSION, BandCheck, check_bands, check_cycles, load_cycle_reference
from mmoc.bench.spec import BenchmarkSpec, with_tau
from mmoc.config import get_settings
from mmoc.graph.nodes.step_control import END_SNAP
from mmoc.graph.state import CoupledState, SimulationContext, StepControl
from mmoc.graph.workflow import initial_state, run_step
from mmoc.services.diffusion import SourceTerm, ThetaSystem
from mmoc.services.fem import SparseOperator, assemble, build_space, interpolate
from mmoc.services.partition import partition_mesh
from mmoc.services.stokes import StokesSystem
from mmoc.services.transport import LookBackBuffer, VelocityHistory, get_rk_scheme
from mmoc.services.vtk_writer import write_vtk

logger = logging.getLogger(__name__)

CFL_FALLBACK_STEPS = 100
# Cycle detection looks at the last sixth of the run, t in [2.5, 3] for Blankenbach
CYCLE_WINDOW = 1.0 / 6.0
CYCLE_SERIES: tuple[str, ...] = ("nu", "u_rms")


@dataclass
class BenchmarkReport:
    """Outcome of one benchmark run.

    Attributes:
        spec: The validated spec that was run.
        rows: Per-step metrics, starting with the initial state (step 0).
        out_dir: Directory holding the written files.
        csv_path: Metric table.
        summary_path: JSON summary with counters and band checks.
        vtk_paths: Written VTK snapshots.
        cycles: Periodic-regime detection per flow series (coupled runs only).
        checks: Reference-band comparisons of the final row.
        counters: Work counters of the run.
        elapsed: Wall-clock seconds spent in time steps.
        throughput: Particles updated per second (``demo_pipe`` only).
        status: ``completed`` or ``failed``.
        error: Message of the exception that aborted the run.
    """

    spec: BenchmarkSpec
    rows: list[MetricRow] = field(default_factory=list)
    out_dir: Path | None = None
    csv_path: Path | None = None
    summary_path: Path | None = None
    vtk_paths: list[Path] = field(default_factory=list)
    cycles: dict[str, CycleReport] = field(default_factory=dict)
    checks: list[BandCheck] = field(default_factory=list)
    counters: dict[str, Any] = field(default_factory=dict)
    elapsed: float = 0.0
    throughput: float | None = None
    status: str = "running"
    error: str | None = None

    @property
    def final(self) -> MetricRow | None:
        return self.rows[-1] if self.rows else None

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.as_record() for row in self.rows], columns=list(CSV_COLUMNS))


# ---------------------------------------------------------------------------
# Context assembly
# ---------------------------------------------------------------------------


def build_context(problem: Problem, spec: BenchmarkSpec) -> SimulationContext:
    """Operators, buffers and step policy for ``problem``.

    Raises:
        ConfigurationError: Propagated from partitioning or the Stokes assembly.
    """
    hierarchy = problem.hierarchy
    space = problem.space
    if spec.cfl is not None:
        fallback = problem.tau or (problem.t_end - problem.t_start) / CFL_FALLBACK_STEPS
        control = StepControl("cfl", fallback, spec.cfl, hierarchy.h_min, problem.t_end)
    else:
        control = StepControl("fixed", problem.tau, 1.0, hierarchy.h_min, problem.t_end)

    if spec.lookback is None and not problem.steady and problem.tau:
        steps = math.ceil((problem.t_end - problem.t_start) / problem.tau - END_SNAP)
        logger.warning(
            "Infinite look-back with a time-dependent velocity: %d steps re-integrate %d intervals in total",
            steps, steps * (steps + 1) // 2,
        )

    layout = partition_mesh(hierarchy, spec.ranks)
    buffer = LookBackBuffer(space, spec.lookback, layout)
    history = VelocityHistory(capacity=spec.lookback)

    theta_system = None
    if problem.kappa > 0.0:
        theta_system = ThetaSystem.build(space, problem.kappa, problem.theta, control.tau)
    source = SourceTerm(space, problem.source) if problem.source is not None else None

    stokes = None
    if problem.coupled:
        stokes = StokesSystem.build(build_space(hierarchy, 2), build_space(hierarchy, 1), 1.0, problem.velocity_bc)

    return SimulationContext(
        space=space,
        control=control,
        rk=get_rk_scheme(spec.rk),
        buffer=buffer,
        history=history,
        theta_system=theta_system,
        source=source,
        boundary=problem.boundary,
        velocity=problem.velocity_provider(),
        stokes=stokes,
        force=problem.force,
    )


# ---------------------------------------------------------------------------
# Metrics and output
# ---------------------------------------------------------------------------


def _metric_row(problem: Problem, state: CoupledState, mass: SparseOperator, m0: float) -> MetricRow:
    c = state["c"]
    exact_fn = problem.exact_at(state["t"])
    c_exact = interpolate(exact_fn, problem.space, state["t"]) if exact_fn is not None else None
    row = compute_metrics(c, c_exact, mass, m0)
    if problem.flow_labels is not None and state["u"] is not None:
        top, bottom = problem.flow_labels
        flow = compute_flow_diagnostics(state["u"], c, top, bottom)
        row.u_rms = flow.u_rms
        row.nu = flow.nu if flow.valid else None
    row.step = state["n"]
    row.tau = state["tau"] if state["n"] else 0.0
    diagnostics = state["diagnostics"]
    row.particles_migrated = int(diagnostics.get("migrated", 0))
    row.clamps = int(diagnostics.get("clamps", 0))
    return row


def _counters(context: SimulationContext) -> dict[str, Any]:
    counters = context.counters
    return {
        "steps": counters.steps,
        "advections": counters.advections,
        "ads_sweeps": counters.ads_sweeps,
        "stokes_solves": counters.stokes_solves,
        "diffusion_solves": counters.diffusion_solves,
        "cg_iterations": counters.diffusion.iterations,
        "particles_migrated": counters.exchange.migrated,
        "clamps": counters.exchange.clamps,
        "escalations": counters.exchange.escalations,
        "exchanges": counters.exchange.exchanges,
        "payload_bytes": counters.exchange.payload_bytes,
    }


def _flush(report: BenchmarkReport) -> None:
    """Write the CSV and the JSON summary of whatever the report holds."""
    out_dir = report.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    report.csv_path = out_dir / f"{report.spec.name}.csv"
    report.to_frame().to_csv(report.csv_path, index=False)

    final = report.final
    summary = {
        "benchmark": report.spec.name,
        "status": report.status,
        "error": report.error,
        "spec": report.spec.to_dict(),
        "final": final.as_record() if final else None,
        "counters": report.counters,
        "elapsed_seconds": report.elapsed,
        "throughput_particles_per_second": report.throughput,
        "reference_version": REFERENCE_VERSION,
        "cycles": {series: cycle.to_dict() for series, cycle in report.cycles.items()},
        "bands": [
            {
                "metric": check.band.metric,
                "reference": check.band.value,
                "kind": check.band.kind,
                "tol": check.band.tol,
                "provenance": check.band.provenance,
                "observed": check.observed,
                "passed": check.passed,
            }
            for check in report.checks
        ],
        "vtk": [str(p) for p in report.vtk_paths],
    }
    report.summary_path = out_dir / "summary.json"
    report.summary_path.write_text(json.dumps(summary, indent=2), encoding="utf-8")
    logger.info("Report written — csv=%s summary=%s rows=%d", report.csv_path, report.summary_path, len(report.rows))


def _detect_cycles(report: BenchmarkReport, problem: Problem) -> dict[str, CycleReport]:
    frame = report.to_frame()
    t0, t1 = problem.t_start, problem.t_end
    window = (t1 - CYCLE_WINDOW * (t1 - t0), t1)
    cycles = {}
    for series in CYCLE_SERIES:
        values = frame[series].astype(float).to_numpy()
        if np.isfinite(values).all():
            cycles[series] = detect_cycle(frame["t"].to_numpy(dtype=float), values, window)
    return cycles


def _snapshot(report: BenchmarkReport, state: CoupledState) -> None:
    vtk_dir = report.out_dir / "vtk"
    n = state["n"]
    report.vtk_paths.append(write_vtk(vtk_dir / f"c_{n:05d}.vtk", state["c"], "temperature", report.spec.name))
    if state["u"] is not None and report.spec.name == "blankenbach":
        report.vtk_paths.append(write_vtk(vtk_dir / f"u_{n:05d}.vtk", state["u"], "velocity", report.spec.name))


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


def run(spec: BenchmarkSpec, cycle_reference: str | Path | None = None) -> BenchmarkReport:
    """Run ``spec`` to its final time and write CSV, VTK and summary files.

    Any error aborts the run after the partial report has been flushed.

    Args:
        spec: Benchmark to run.
        cycle_reference: ``summary.json`` of a finer run of the same coupled
            problem; its stage extrema are checked within ``CYCLE_MATCH``.

    Returns:
        The completed report.

    Raises:
        ConfigurationError: If the spec or the cycle reference is invalid.
    """
    spec.validate()
    reference = load_cycle_reference(cycle_reference) if cycle_reference is not None else None
    out_dir = Path(spec.out_dir or get_settings().out_dir)
    report = BenchmarkReport(spec=spec, out_dir=out_dir)
    logger.info("Benchmark started — name=%s scheme=%s ranks=%d", spec.name, spec.scheme, spec.ranks)
    context = None
    try:
        problem = build_problem(spec)
        context = build_context(problem, spec)
        c0 = interpolate(problem.initial, problem.space, problem.t_start)
        mass = context.theta_system.mass if context.theta_system is not None else assemble(problem.space, "mass")
        m0 = mass_functional(c0, mass)

        state = initial_state(c0, context, t0=problem.t_start)
        report.rows.append(_metric_row(problem, state, mass, m0))
        if spec.vtk_every:
            _snapshot(report, state)

        ctrl = context.control
        while ctrl.t_end - state["t"] > END_SNAP * ctrl.tau:
            started = time.perf_counter()
            state = run_step(state, spec.scheme)
            report.elapsed += time.perf_counter() - started
            row = _metric_row(problem, state, mass, m0)
            report.rows.append(row)
            if not np.isfinite(row.var):
                raise FloatingPointError(f"Non-finite temperature at step {state['n']}")
            if spec.vtk_every and state["n"] % spec.vtk_every == 0:
                _snapshot(report, state)

        report.counters = _counters(context)
        if spec.name == "demo_pipe" and report.elapsed > 0.0:
            report.throughput = problem.space.n_dofs * context.counters.advections / report.elapsed
            logger.info("Throughput — particles_per_second=%.3e migrated=%d",
                        report.throughput, context.counters.exchange.migrated)
        if problem.flow_labels is not None:
            report.cycles = _detect_cycles(report, problem)
        periods = {f"{series}_period": float(cycle.period) for series, cycle in report.cycles.items()}
        report.checks = check_bands(spec, {**report.final.as_record(), **periods})
        if reference is not None:
            report.checks += check_cycles(spec.name, report.cycles, reference)
        report.status = "completed"
    except Exception as exc:
        report.status = "failed"
        report.error = f"{type(exc).__name__}: {exc}"
        if context is not None:
            report.counters = _counters(context)
        logger.error("Benchmark failed — name=%s after %d rows: %s", spec.name, len(report.rows), report.error)
        _flush(report)
        raise

    _flush(report)
    logger.info(
        "Benchmark finished — name=%s steps=%d elapsed=%.2fs bands_passed=%s",
        spec.name, report.counters.get("steps", 0), report.elapsed, report.passed,
    )
    return report


def sweep(spec: BenchmarkSpec, taus: list[float]) -> pd.DataFrame:
    """Run ``spec`` once per step length and tabulate the final metrics.

    Each run writes into ``<out>/tau_<tau>``; the table goes to ``<out>/sweep.csv``.
    """
    if not taus:
        raise ValueError("sweep needs at least one step length")
    base = Path(spec.out_dir or get_settings().out_dir)
    records = []
    for tau in taus:
        sub = replace(with_tau(spec, tau), out_dir=str(base / f"tau_{tau:g}"))
        report = run(sub)
        record = {"tau_requested": tau, **report.final.as_record(), "steps": report.counters.get("steps", 0)}
        records.append(record)

    table = pd.DataFrame(records)
    base.mkdir(parents=True, exist_ok=True)
    table.to_csv(base / "sweep.csv", index=False)
    logger.info("Sweep finished — runs=%d table=%s", len(records), base / "sweep.csv")
    return table
