"""Benchmark harness tests: spec files, metrics, reference bands, problems, the runner and the CLI.

Runs use coarse meshes and a handful of steps; the long acceptance runs at
published resolutions are marked ``slow``.
"""

import json
import math
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

from mmoc.bench.metrics import (
    CSV_COLUMNS,
    compute_flow_diagnostics,
    compute_metrics,
    detect_cycle,
    mass_functional,
    nusselt_number,
)
from mmoc.bench.problems import (
    annulus_solution,
    annulus_start_time,
    blankenbach_initial,
    build_problem,
    cone,
    hill,
    rotation_exact,
    rotation_tau,
    slotted_cylinder,
    swirl_velocity,
)
from mmoc.bench.reference import bands_for, check_bands, check_cycles, load_cycle_reference
from mmoc.bench.runner import run, sweep
from mmoc.bench.spec import BenchmarkSpec, load_spec, parse_spec_text, spec_from_mapping, with_tau
from mmoc.errors import ConfigurationError, SolverError
from mmoc.main import main
from mmoc.services.fem import ScalarField, assemble, build_space, interpolate, interpolate_vector
from mmoc.services.mesh import refine, unit_square
from mmoc.services.vtk_writer import write_vtk

# ─── helpers ──────────────────────────────────────────────────────────────────


def _rotation_spec(tmp_path, **overrides) -> BenchmarkSpec:
    params = {"name": "rotation2d", "level": 2, "degree": 1, "tau": 0.1, "t_end": 0.8,
              "initial": "hill", "out_dir": str(tmp_path)}
    params.update(overrides)
    return BenchmarkSpec(**params).validate()


def _write_spec(tmp_path, text: str):
    path = tmp_path / "case.spec"
    path.write_text(text, encoding="utf-8")
    return path


def _read_summary(out_dir) -> dict:
    return json.loads((out_dir / "summary.json").read_text(encoding="utf-8"))


def _assert_summary(summary: dict, status: str) -> None:
    assert summary["status"] == status, f"Expected status {status!r}, got {summary['status']!r}"
    for key in ("benchmark", "spec", "final", "counters", "reference_version", "cycles", "bands"):
        assert key in summary, f"Summary misses {key!r}"


def _alternating_series(scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Sine whose amplitude alternates between 1 and 1.5 every unit of time (a P2 cycle)."""
    t = np.linspace(0.0, 20.0, 2001)
    return t, scale * np.sin(2.0 * np.pi * t) * (1.0 + 0.5 * (np.floor(t) % 2))


# ─── Scenario 1: Spec files ───────────────────────────────────────────────────


def test_01_parse_key_value_spec():
    data = parse_spec_text("# rotation case\nname = rotation2d\nlevel = 4   # fine\nlookback = inf\ntau: 0.01\n")
    spec = spec_from_mapping(data)
    assert spec.name == "rotation2d" and spec.level == 4
    assert spec.lookback is None, "lookback = inf must map to None"
    assert spec.tau == 0.01
    assert spec.to_dict()["lookback"] == "inf"
    print(f"  ✓ Parsed {spec.name} level={spec.level} lookback=inf")


def test_02_parse_json_spec_and_overrides(tmp_path):
    path = _write_spec(tmp_path, json.dumps({"name": "demo_pipe", "level": 1, "tau": 0.1, "ranks": 1}))
    spec = load_spec(path, ranks=3, out_dir=None)
    assert spec.ranks == 3, "Command-line overrides win over the file"
    assert spec.out_dir is None
    assert with_tau(spec, 0.05).tau == 0.05


@pytest.mark.parametrize("data, message", [
    ({"name": "rotation2d", "tau": 0.1, "colour": "red"}, "Unknown spec keys"),
    ({"tau": 0.1}, "needs a benchmark name"),
    ({"name": "rotation2d"}, "Either tau or cfl"),
    ({"name": "rotation2d", "tau": 0.1, "kappa": 1e-3, "lookback": 5}, "lookback = 1"),
    ({"name": "rotation2d", "tau": 0.1, "scheme": "pc"}, "only defined for blankenbach"),
    ({"name": "blankenbach", "tau": 0.1, "kappa": 1.0}, "needs scheme = pc"),
    ({"name": "annulus_ad", "tau": 0.1}, "annulus_ad needs kappa > 0"),
    ({"name": "rotation2d", "tau": "fast"}, "Invalid value"),
    ({"name": "poiseuille", "tau": 0.1}, "Unknown benchmark"),
    ({"name": "rotation2d", "tau": 0.1, "ranks": 4}, "exceeds the 2 macro volumes"),
])
def test_03_invalid_specs_rejected(data, message):
    with pytest.raises(ConfigurationError, match=message):
        spec_from_mapping(data)


def test_04_unreadable_spec_file_rejected(tmp_path):
    with pytest.raises(ConfigurationError, match="Cannot read spec file"):
        load_spec(tmp_path / "missing.spec")


# ─── Scenario 2: Metrics ──────────────────────────────────────────────────────


def test_05_metrics_of_scaled_field():
    space = build_space(refine(unit_square(), 2), 1)
    M = assemble(space, "mass")
    exact = interpolate(lambda x: x[:, 0] + 1.0, space)
    half = ScalarField(space, 0.5 * exact.coefficients)
    m0 = mass_functional(exact, M)

    same = compute_metrics(exact, exact, M, m0)
    assert same.h0_error == 0.0 and same.e_peak == 0.0 and abs(same.delta_m) < 1e-15

    row = compute_metrics(half, exact, M, m0)
    assert math.isclose(row.e_peak, -0.5, rel_tol=1e-12)
    assert math.isclose(row.delta_m, -0.5, rel_tol=1e-12)
    assert math.isclose(row.var, 0.5, rel_tol=1e-12)
    assert math.isclose(row.h0_error, 0.5 * math.sqrt(7.0 / 3.0), rel_tol=1e-12)
    print(f"  ✓ e_peak={row.e_peak}, delta_m={row.delta_m:.3f}, h0={row.h0_error:.4f}")


def test_06_undefined_metrics_are_none_or_nan():
    space = build_space(refine(unit_square(), 1), 1)
    M = assemble(space, "mass")
    zero = ScalarField(space, np.zeros(space.n_dofs))
    row = compute_metrics(zero, zero, M, 0.0)
    assert math.isnan(row.delta_m)
    assert row.e_peak is None
    assert list(row.as_record()) == list(CSV_COLUMNS)


def test_07_hill_mass_matches_closed_form():
    """int hill = pi R^2 (1/4 - 1/pi^2) for the raised-cosine bump of radius R."""
    space = build_space(refine(unit_square(), 6), 2)
    mass = mass_functional(interpolate(hill, space), assemble(space, "mass"))
    expected = math.pi * 0.15**2 * (0.25 - 1.0 / math.pi**2)
    assert math.isclose(expected, 0.010510, rel_tol=1e-3)
    assert math.isclose(mass, expected, rel_tol=1e-3), f"Hill mass {mass:.6f} != {expected:.6f}"
    print(f"  ✓ Hill mass {mass:.6f}")


def test_08_flow_diagnostics_of_simple_fields():
    space = build_space(refine(unit_square(), 2), 2)
    u = interpolate_vector(lambda x: np.tile([0.3, 0.4], (len(x), 1)), space)
    c = interpolate(lambda x: 1.0 - x[:, 1], space)
    flow = compute_flow_diagnostics(u, c)
    assert math.isclose(flow.u_rms, 0.5, rel_tol=1e-12), f"u_rms {flow.u_rms}"
    assert math.isclose(flow.nu, 1.0, rel_tol=1e-12), f"Nu {flow.nu}"
    assert flow.valid
    cold = interpolate(lambda x: np.zeros(len(x)), space)
    assert math.isnan(nusselt_number(cold))


def test_09_cycle_detection():
    t = np.linspace(0.0, 20.0, 2001)
    plain = np.sin(2.0 * np.pi * t)
    alternating = plain * (1.0 + 0.5 * (np.floor(t) % 2))
    assert detect_cycle(t, plain).period == 1
    report = detect_cycle(t, alternating, window=(0.0, 10.0))
    assert report.period == 2, f"Expected a P2 cycle, got P{report.period}"
    assert {name for name, _, _ in report.stages} == {"S0", "S1"}
    assert detect_cycle(t, np.ones_like(t)).period == 0
    print(f"  ✓ P{report.period} with {len(report.maxima)} maxima")


# ─── Scenario 3: Reference bands ──────────────────────────────────────────────


def test_10_bands_select_matching_runs():
    spec = BenchmarkSpec("rotation2d", level=6, degree=2, tau=0.0101, lookback=10, initial="hill").validate()
    bands = bands_for(spec)
    assert len(bands) == 1 and bands[0].value == 3.43e-4, f"Matched {bands}"
    assert check_bands(spec, {"h0_error": 5e-4})[0].passed
    assert not check_bands(spec, {"h0_error": 1e-3})[0].passed
    assert not check_bands(spec, {"h0_error": None})[0].passed
    assert bands_for(BenchmarkSpec("rotation2d", level=2, tau=0.1).validate()) == []


def test_11_blankenbach_conduction_band():
    spec = BenchmarkSpec("blankenbach", scheme="pc", kappa=1.0, rayleigh=0.0, tau=0.1).validate()
    assert check_bands(spec, {"nu": 2.0004})[0].passed
    assert not check_bands(spec, {"nu": 1.0})[0].passed


# ─── Scenario 4: Problems ─────────────────────────────────────────────────────


def test_12_initial_condition_spot_values():
    assert hill(np.array([0.25, 0.5]))[0] == 0.5
    assert cone(np.array([0.5, 0.25]))[0] == 1.0
    assert slotted_cylinder(np.array([0.5, 0.75]))[0] == 0.0, "Centre lies in the slot"
    assert slotted_cylinder(np.array([0.5, 0.88]))[0] == 1.0
    assert slotted_cylinder(np.array([0.4, 0.75]))[0] == 1.0
    assert math.isclose(blankenbach_initial(np.array([0.75, 0.5]))[0], 0.375, rel_tol=1e-12)
    assert math.isclose(blankenbach_initial(np.array([0.0, 0.5]))[0], 0.385, rel_tol=1e-12)


def test_13_analytic_solutions():
    points = np.array([[0.25, 0.5], [0.5, 0.25], [0.6, 0.7]])
    revolution = rotation_exact("all")(points, 2.0 * math.pi)
    assert np.allclose(revolution, rotation_exact("all")(points, 0.0))
    assert math.isclose(rotation_tau(0.1), 2.0 * math.pi / 63, rel_tol=1e-12)
    peak = [annulus_solution(k)(np.array([[0.0, 1.0]]), annulus_start_time(k))[0] for k in (1e-3, 1e-5)]
    assert math.isclose(peak[0], peak[1], rel_tol=1e-12), "Every kappa starts from the same hill"
    assert np.allclose(swirl_velocity(np.random.default_rng(2).random((5, 3)), 0.75), 0.0, atol=1e-15)


@pytest.mark.parametrize("params", [
    {"name": "rotation2d", "level": 1, "tau": 0.1},
    {"name": "swirl3d", "level": 0, "tau": 0.1},
    {"name": "annulus_ad", "level": 0, "degree": 2, "kappa": 1e-3, "tau": 0.1},
    {"name": "blankenbach", "level": 0, "degree": 2, "scheme": "pc", "kappa": 1.0, "tau": 1e-3},
    {"name": "demo_pipe", "level": 0, "tau": 0.1},
])
def test_14_every_benchmark_builds(params):
    problem = build_problem(BenchmarkSpec(**params).validate())
    c0 = interpolate(problem.initial, problem.space, problem.t_start)
    assert problem.space.n_dofs > 0 and np.isfinite(c0.coefficients).all()
    assert problem.t_end > problem.t_start
    assert problem.coupled == (params["name"] == "blankenbach")
    assert (problem.velocity_provider() is None) == problem.coupled
    print(f"  ✓ {problem.name}: {problem.space.n_dofs} DoFs, t=[{problem.t_start:.4g}, {problem.t_end:.4g}]")


# ─── Scenario 5: Runner ───────────────────────────────────────────────────────


def test_15_run_writes_csv_vtk_and_summary(tmp_path):
    report = run(_rotation_spec(tmp_path, vtk_every=4))
    frame = pd.read_csv(report.csv_path)
    assert list(frame.columns) == list(CSV_COLUMNS)
    assert len(frame) == 9, f"Initial row plus 8 steps expected, got {len(frame)}"
    assert frame["step"].tolist() == list(range(9))
    assert math.isclose(frame["t"].iloc[-1], 0.8, rel_tol=1e-12)
    assert len(report.vtk_paths) == 3, f"Snapshots at steps 0, 4, 8; got {report.vtk_paths}"
    assert all(p.exists() for p in report.vtk_paths)
    summary = _read_summary(tmp_path)
    _assert_summary(summary, "completed")
    assert summary["counters"]["steps"] == 8 and summary["counters"]["advections"] == 8
    print(f"  ✓ {len(frame)} rows, final h0_error={frame['h0_error'].iloc[-1]:.3e}")


def test_16_run_is_partition_invariant(tmp_path):
    finals, migrated = {}, {}
    for ranks in (1, 4):
        report = run(_rotation_spec(tmp_path / f"r{ranks}", degree=2, nx=2, ny=2, ranks=ranks, t_end=0.4))
        finals[ranks] = report.final.h0_error
        migrated[ranks] = report.counters["particles_migrated"]
    assert math.isclose(finals[1], finals[4], rel_tol=1e-10), f"h0_error R=1 {finals[1]} vs R=4 {finals[4]}"
    assert migrated[1] == 0 and migrated[4] > 0
    print(f"  ✓ R=1 and R=4 agree, {migrated[4]} particles migrated")


def test_17_pipe_demo_reports_throughput(tmp_path):
    spec = BenchmarkSpec("demo_pipe", level=1, tau=0.25, t_end=0.5, ranks=2, out_dir=str(tmp_path)).validate()
    report = run(spec)
    assert report.throughput is not None and report.throughput > 0.0
    assert _read_summary(tmp_path)["throughput_particles_per_second"] == report.throughput
    assert report.counters["particles_migrated"] > 0, "The blob moves across the rank interface"


def test_18_blankenbach_conduction_reaches_nusselt_two(tmp_path):
    spec = BenchmarkSpec("blankenbach", level=1, degree=2, scheme="pc", kappa=1.0, rayleigh=0.0,
                         tau=0.1, t_end=0.3, out_dir=str(tmp_path)).validate()
    report = run(spec)
    assert report.final.u_rms == 0.0
    assert report.checks and report.passed, f"Nu={report.final.nu} outside the conduction band"
    assert report.counters["stokes_solves"] == 1 + 2 * 3
    print(f"  ✓ Nu={report.final.nu:.6f}")


def test_19_solver_failure_flushes_partial_report(tmp_path):
    spec = _rotation_spec(tmp_path)
    with patch("mmoc.graph.nodes.advection.mmoc_advect", side_effect=SolverError("CG stalled", [1.0, 0.5])):
        with pytest.raises(SolverError):
            run(spec)
    summary = _read_summary(tmp_path)
    _assert_summary(summary, "failed")
    assert "CG stalled" in summary["error"]
    assert len(pd.read_csv(tmp_path / "rotation2d.csv")) == 1, "Only the initial row was computed"
    print("  ✓ Partial report written with status=failed")


def test_20_non_finite_temperature_aborts(tmp_path):
    def poisoned(buffer, history, rk, tau):
        return ScalarField(buffer.space, np.full(buffer.space.n_dofs, np.nan), history.latest.t_new)

    with patch("mmoc.graph.nodes.advection.mmoc_advect", side_effect=poisoned):
        with pytest.raises(FloatingPointError, match="Non-finite"):
            run(_rotation_spec(tmp_path))
    assert _read_summary(tmp_path)["status"] == "failed"


def test_21_sweep_tabulates_final_rows(tmp_path):
    table = sweep(_rotation_spec(tmp_path, t_end=0.4), [0.2, 0.1])
    assert table["steps"].tolist() == [2, 4]
    assert (tmp_path / "sweep.csv").exists()
    assert (tmp_path / "tau_0.2" / "summary.json").exists()
    with pytest.raises(ValueError, match="at least one step"):
        sweep(_rotation_spec(tmp_path), [])


def test_22_vtk_file_layout(tmp_path):
    space = build_space(refine(unit_square(), 1), 2)
    path = write_vtk(tmp_path / "c.vtk", interpolate(lambda x: x[:, 0], space), "temperature")
    lines = path.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 2.0"
    assert f"POINTS {space.n_dofs} double" in lines
    assert f"CELL_TYPES {len(space.element_dofs)}" in lines
    assert "SCALARS temperature double 1" in lines


# ─── Scenario 6: Command line ─────────────────────────────────────────────────


def test_23_cli_exit_codes(tmp_path):
    good = _write_spec(tmp_path, "name = rotation2d\nlevel = 1\ntau = 0.2\nt_end = 0.4\n")
    assert main(["run", "--spec", str(good), "--out", str(tmp_path / "ok")]) == 0
    assert (tmp_path / "ok" / "summary.json").exists()

    bad = tmp_path / "bad.spec"
    bad.write_text("name = rotation2d\ntau = 0.2\nscheme = pc\n", encoding="utf-8")
    assert main(["run", "--spec", str(bad)]) == 2

    with patch("mmoc.graph.nodes.advection.mmoc_advect", side_effect=SolverError("stalled", [1.0])):
        assert main(["run", "--spec", str(good), "--out", str(tmp_path / "fail")]) == 3
    print("  ✓ Exit codes 0 / 2 / 3")


def test_24_cli_sweep(tmp_path):
    spec = _write_spec(tmp_path, "name = rotation2d\nlevel = 1\ntau = 0.2\nt_end = 0.4\n")
    assert main(["sweep", "--spec", str(spec), "--out", str(tmp_path), "--taus", "0.2,0.1"]) == 0
    assert len(pd.read_csv(tmp_path / "sweep.csv")) == 2


# ─── Scenario 7: Periodic regimes ─────────────────────────────────────────────


def test_25_stage_extrema_ordered_by_maximum():
    t, values = _alternating_series()
    report = detect_cycle(t, values, window=(0.0, 10.0))
    pairs = report.stage_extrema()
    assert np.allclose(pairs, [[1.5, -1.5], [1.0, -1.0]]), f"Unexpected stage extrema {pairs}"
    assert report.to_dict()["stage_extrema"] == [list(pair) for pair in pairs]
    assert detect_cycle(t, np.ones_like(t)).stage_extrema() == []


def test_26_cycle_reference_checks_within_two_percent(tmp_path):
    t, values = _alternating_series()
    reference_path = tmp_path / "reference.json"
    reference_path.write_text(
        json.dumps({"cycles": {"nu": detect_cycle(t, values, (0.0, 10.0)).to_dict()}}), encoding="utf-8"
    )
    reference = load_cycle_reference(reference_path)
    assert list(reference) == ["nu"] and len(reference["nu"]) == 2

    for scale, expected in ((1.0, True), (1.01, True), (1.05, False)):
        t, scaled = _alternating_series(scale)
        checks = check_cycles("blankenbach", {"nu": detect_cycle(t, scaled, (0.0, 10.0))}, reference)
        assert len(checks) == 4, "Maximum and minimum of two stages"
        assert all(check.passed == expected for check in checks), f"scale={scale}: {checks}"
    missing = check_cycles("blankenbach", {}, reference)
    assert missing and not any(check.passed for check in missing), "An absent series must fail"
    print(f"  ✓ Stage metrics {[check.band.metric for check in checks]}")


def test_27_cycle_reference_errors(tmp_path):
    with pytest.raises(ConfigurationError, match="Cannot read cycle reference"):
        load_cycle_reference(tmp_path / "missing.json")
    empty = tmp_path / "summary.json"
    empty.write_text(json.dumps({"cycles": {"nu": {"period": 0, "stage_extrema": []}}}), encoding="utf-8")
    with pytest.raises(ConfigurationError, match="holds no periodic stage extrema"):
        load_cycle_reference(empty)


def test_28_period_bands_use_default_final_time():
    spec = BenchmarkSpec("blankenbach", scheme="pc", kappa=1.0, rayleigh=216000.0, cfl=0.5).validate()
    assert {band.metric for band in bands_for(spec)} == {"nu_period", "u_rms_period"}
    assert all(check.passed for check in check_bands(spec, {"nu_period": 2.0, "u_rms_period": 2.0}))
    assert not any(check.passed for check in check_bands(spec, {"nu_period": 4.0, "u_rms_period": 1.0}))
    short = BenchmarkSpec("blankenbach", scheme="pc", kappa=1.0, rayleigh=216000.0, cfl=0.5, t_end=0.1).validate()
    assert bands_for(short) == [], "A shortened run has no periodic regime to check"


def test_29_run_checks_cycle_reference(tmp_path):
    reference = tmp_path / "fine.json"
    reference.write_text(json.dumps({"cycles": {"nu": {"stage_extrema": [[2.1, 1.9]]}}}), encoding="utf-8")
    spec = BenchmarkSpec("blankenbach", level=1, degree=2, scheme="pc", kappa=1.0, rayleigh=0.0,
                         tau=0.1, t_end=0.3, out_dir=str(tmp_path / "run")).validate()
    report = run(spec, cycle_reference=reference)
    metrics = {check.band.metric: check.passed for check in report.checks}
    assert metrics["nu"], "The conduction band still applies"
    assert metrics["nu_S0_max"] is False and metrics["nu_S0_min"] is False, "A steady run has no stages"
    summary = _read_summary(tmp_path / "run")
    _assert_summary(summary, "completed")
    assert summary["cycles"]["u_rms"]["period"] == 0

    text = "name = blankenbach\nlevel = 1\ndegree = 2\nscheme = pc\nkappa = 1\nrayleigh = 0\ntau = 0.1\nt_end = 0.2\n"
    spec_path = _write_spec(tmp_path, text)
    assert main(["run", "--spec", str(spec_path), "--out", str(tmp_path / "cli"), "--reference", str(reference)]) == 1
    assert main(["run", "--spec", str(spec_path), "--reference", str(tmp_path / "absent.json")]) == 2
    print(f"  ✓ {len(report.checks)} checks, cycle stages failed as expected")


# ─── Scenario 8: Reduced acceptance runs ──────────────────────────────────────


def test_30_rank_count_limited_by_macro_volumes():
    expected = [
        (BenchmarkSpec("rotation2d", tau=0.1), 2),
        (BenchmarkSpec("rotation2d", tau=0.1, nx=2, ny=2), 8),
        (BenchmarkSpec("swirl3d", tau=0.1), 6),
        (BenchmarkSpec("annulus_ad", kappa=1e-3, tau=0.1), 96),
        (BenchmarkSpec("blankenbach", scheme="pc", kappa=1.0, tau=0.1), 12),
        (BenchmarkSpec("demo_pipe", tau=0.1), 24),
    ]
    for spec, count in expected:
        assert spec.n_macros == count, f"{spec.name}: {spec.n_macros} macro volumes, expected {count}"
    assert BenchmarkSpec("rotation2d", tau=0.1, nx=2, ny=2, ranks=4).validate().ranks == 4


def test_31_large_cfl_rotation_stays_bounded(tmp_path):
    """tau = 0.5 on h = 1/8 is a CFL number near 3; b = inf only evaluates the initial field."""
    report = run(_rotation_spec(tmp_path, level=3, tau=0.5, t_end=2.0, lookback=None, initial="all"))
    assert report.counters["steps"] == 4
    assert report.final.var <= 1.05, f"var={report.final.var:.4f} above 1.05"
    assert math.isfinite(report.final.h0_error)
    print(f"  ✓ var={report.final.var:.4f}, h0_error={report.final.h0_error:.3e}")


def test_32_swirl_infinite_lookback_keeps_range(tmp_path):
    spec = BenchmarkSpec("swirl3d", level=1, tau=0.5, lookback=None, out_dir=str(tmp_path)).validate()
    with patch("mmoc.bench.runner.logger") as mock_logger:
        report = run(spec)
    assert abs(report.final.var - 1.0) <= 1e-6, f"var={report.final.var!r}"
    assert math.isfinite(report.final.h0_error)
    warnings = [call.args[1:] for call in mock_logger.warning.call_args_list]
    assert (3, 6) in warnings, f"Expected the re-integration estimate for 3 steps, got {warnings}"
    print(f"  ✓ var={report.final.var:.8f}, h0_error={report.final.h0_error:.3e}")


def test_33_annulus_error_decreases_with_refinement(tmp_path):
    errors = {}
    for level in (1, 2):
        spec = BenchmarkSpec("annulus_ad", level=level, degree=2, kappa=1e-3, tau=0.25, t_end=0.5,
                             out_dir=str(tmp_path / f"l{level}")).validate()
        errors[level] = run(spec).final.h0_error
    assert all(math.isfinite(e) for e in errors.values()), f"Non-finite errors {errors}"
    assert errors[2] < errors[1], f"Refinement did not reduce the error: {errors}"
    print(f"  ✓ h0_error level 1 {errors[1]:.3e}, level 2 {errors[2]:.3e}")


def test_34_convection_at_high_rayleigh_starts_cleanly(tmp_path):
    spec = BenchmarkSpec("blankenbach", level=1, degree=2, scheme="pc", kappa=1.0, rayleigh=216000.0,
                         tau=1e-3, t_end=3e-3, out_dir=str(tmp_path)).validate()
    frame = run(spec).to_frame()
    assert frame["u_rms"].gt(0.0).all() and np.isfinite(frame["nu"].astype(float)).all()


# ─── Scenario 9: Acceptance runs (slow) ───────────────────────────────────────


@pytest.mark.slow
def test_35_hill_infinite_lookback_is_exact(tmp_path):
    spec = BenchmarkSpec("rotation2d", level=6, degree=2, tau=1e-2, lookback=None, initial="hill",
                         out_dir=str(tmp_path)).validate()
    report = run(spec)
    assert report.checks and report.passed, f"h0_error {report.final.h0_error:.3e}"


@pytest.mark.slow
def test_36_hill_error_depends_on_tau_times_lookback(tmp_path):
    errors = {}
    for tau, b in ((1e-2, 10), (1.01e-1, 1)):
        spec = BenchmarkSpec("rotation2d", level=6, degree=2, tau=tau, lookback=b, initial="hill",
                             out_dir=str(tmp_path / f"b{b}")).validate()
        errors[(tau, b)] = run(spec).final.h0_error
    ratio = errors[(1e-2, 10)] / errors[(1.01e-1, 1)]
    assert 0.8 < ratio < 1.2, f"Equal tau*b should give comparable errors, ratio {ratio:.3f}"


@pytest.mark.slow
def test_37_blankenbach_convection_smoke(tmp_path):
    spec = BenchmarkSpec("blankenbach", level=2, degree=2, scheme="pc", kappa=1.0, rayleigh=1e4,
                         tau=1e-3, t_end=2e-2, out_dir=str(tmp_path)).validate()
    report = run(spec)
    frame = report.to_frame()
    assert frame["u_rms"].gt(0.0).all() and np.isfinite(frame["nu"]).all()


@pytest.mark.slow
@pytest.mark.parametrize("degree, level, lookback", [(1, 7, None), (1, 7, 1), (2, 6, None), (2, 6, 1)])
def test_38_rotation_bodies_match_published_bands(tmp_path, degree, level, lookback):
    spec = BenchmarkSpec("rotation2d", level=level, degree=degree, tau=1e-3, lookback=lookback, initial="all",
                         out_dir=str(tmp_path)).validate()
    report = run(spec)
    metrics = {check.band.metric for check in report.checks}
    assert "h0_error" in metrics, f"No h0_error band for P{degree} b={lookback}"
    if lookback is None:
        assert "delta_m" in metrics, "b=inf runs carry the mass-drift bound"
    failed = [(c.band.metric, c.observed, c.band.value) for c in report.checks if not c.passed]
    assert not failed, f"P{degree} level {level} b={lookback}: failed bands {failed}"
    print(f"  ✓ P{degree} b={lookback}: h0_error={report.final.h0_error:.3e} delta_m={report.final.delta_m:.3e}")


@pytest.mark.slow
def test_39_rotation_at_cfl_three_stays_bounded(tmp_path):
    spec = BenchmarkSpec("rotation2d", level=6, degree=1, tau=0.065, lookback=None, initial="all",
                         out_dir=str(tmp_path)).validate()
    report = run(spec)
    assert [check.band.metric for check in report.checks] == ["var"]
    assert report.passed, f"var={report.final.var:.4f} above 1.05"
    assert math.isfinite(report.final.h0_error)


@pytest.mark.slow
@pytest.mark.parametrize("tau", [1e-1, 5e-2, 2.5e-2])
def test_40_swirl_matches_published_bands(tmp_path, tau):
    spec = BenchmarkSpec("swirl3d", level=5, degree=1, tau=tau, lookback=None, out_dir=str(tmp_path)).validate()
    report = run(spec)
    assert {check.band.metric for check in report.checks} == {"h0_error", "var"}
    assert report.passed, f"tau={tau}: h0_error={report.final.h0_error:.3e} var={report.final.var!r}"
    print(f"  ✓ tau={tau}: h0_error={report.final.h0_error:.3e}")


@pytest.mark.slow
@pytest.mark.parametrize("kappa", [1e-3, 1e-5, 1e-7])
def test_41_annulus_matches_published_bands(tmp_path, kappa):
    spec = BenchmarkSpec("annulus_ad", level=4, degree=2, kappa=kappa, tau=0.1, out_dir=str(tmp_path)).validate()
    report = run(spec)
    assert {check.band.metric for check in report.checks} == {"h0_error", "e_peak"}
    assert report.passed, f"kappa={kappa}: h0_error={report.final.h0_error:.3e} e_peak={report.final.e_peak:.3e}"


@pytest.mark.slow
def test_42_blankenbach_high_rayleigh_smoke(tmp_path):
    spec = BenchmarkSpec("blankenbach", level=3, degree=2, scheme="pc", kappa=1.0, rayleigh=216000.0,
                         cfl=0.5, t_end=0.1, out_dir=str(tmp_path)).validate()
    report = run(spec)
    frame = report.to_frame()
    assert report.status == "completed"
    assert math.isclose(frame["t"].iloc[-1], 0.1, rel_tol=1e-9)
    assert frame["u_rms"].gt(0.0).all() and np.isfinite(frame["nu"].astype(float)).all()


@pytest.mark.slow
def test_43_blankenbach_cycle_matches_finer_mesh(tmp_path):
    """24 x 16 against the 48 x 32 self-reference over t in [0, 3]."""
    params = {"name": "blankenbach", "degree": 2, "scheme": "pc", "kappa": 1.0, "rayleigh": 216000.0, "cfl": 0.5}
    fine = run(BenchmarkSpec(level=4, out_dir=str(tmp_path / "fine"), **params).validate())
    assert fine.cycles["nu"].period == 2 and fine.cycles["u_rms"].period == 2
    assert fine.passed, "The fine run must show the P2 cycle"

    coarse = run(BenchmarkSpec(level=3, out_dir=str(tmp_path / "coarse"), **params).validate(),
                 cycle_reference=fine.summary_path)
    failed = [(c.band.metric, c.observed, c.band.value) for c in coarse.checks if not c.passed]
    assert not failed, f"Coarse cycle deviates from the self-reference: {failed}"
    print(f"  ✓ {len(coarse.checks)} checks against the 48 x 32 reference")
