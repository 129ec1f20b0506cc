"""Taylor-Hood Stokes tests: manufactured convergence, Boussinesq forcing and boundary handling."""

import math

import numpy as np
import pytest

from mmoc.errors import ConfigurationError, SolverError
from mmoc.services.blending import AnnulusBlending
from mmoc.services.fem import ScalarField, build_space, interpolate, l2_error
from mmoc.services.mesh import BoundaryTag, annulus, refine, unit_square
from mmoc.services.stokes import BoussinesqForce, StokesSystem, VelocityBC, assemble_vector_load, stokes_solve

SIDES = ("left", "right", "bottom", "top")
PI = math.pi

# ─── helpers ──────────────────────────────────────────────────────────────────


def _bc(kind: BoundaryTag = BoundaryTag.NO_SLIP) -> VelocityBC:
    return VelocityBC({label: kind for label in SIDES})


def _build_system(level: int, kind: BoundaryTag = BoundaryTag.NO_SLIP, inner: str = "lu"):
    h = refine(unit_square(), level)
    return StokesSystem.build(build_space(h, 2), build_space(h, 1), 1.0, _bc(kind), inner)


def _exact_velocity(x: np.ndarray) -> np.ndarray:
    sx, sy = np.sin(PI * x[:, 0]), np.sin(PI * x[:, 1])
    return np.column_stack([sx**2 * np.sin(2 * PI * x[:, 1]), -np.sin(2 * PI * x[:, 0]) * sy**2])


def _exact_pressure(x: np.ndarray) -> np.ndarray:
    return np.cos(PI * x[:, 0]) * np.cos(PI * x[:, 1])


def _forcing(x: np.ndarray) -> np.ndarray:
    """-Laplace(u) + grad(p) for the manufactured pair."""
    X, Y = x[:, 0], x[:, 1]
    lap_u1 = 2 * PI**2 * np.sin(2 * PI * Y) * (2 * np.cos(2 * PI * X) - 1)
    lap_u2 = -2 * PI**2 * np.sin(2 * PI * X) * (2 * np.cos(2 * PI * Y) - 1)
    dpx = -PI * np.sin(PI * X) * np.cos(PI * Y)
    dpy = -PI * np.cos(PI * X) * np.sin(PI * Y)
    return np.column_stack([-lap_u1 + dpx, -lap_u2 + dpy])


def _manufactured_errors(level: int) -> tuple[float, float, dict]:
    system = _build_system(level)
    c = ScalarField(system.pressure_space, np.zeros(system.pressure_space.n_dofs))
    rhs = assemble_vector_load(system.velocity_space, _forcing)
    u, p, info = stokes_solve(c, BoussinesqForce.constant(0.0), system, rhs=rhs)
    return l2_error(u, _exact_velocity), l2_error(p, _exact_pressure), info


def _blob(x: np.ndarray) -> np.ndarray:
    return np.exp(-20.0 * ((x[:, 0] - 0.3) ** 2 + (x[:, 1] - 0.4) ** 2))


# ─── Scenario 1: Manufactured solution ────────────────────────────────────────


def test_01_manufactured_solution_converges_at_taylor_hood_rates():
    eu3, ep3, _ = _manufactured_errors(3)
    eu4, ep4, info = _manufactured_errors(4)
    rate_u, rate_p = math.log2(eu3 / eu4), math.log2(ep3 / ep4)
    assert rate_u > 2.5, f"Velocity L2 rate {rate_u:.2f} (errors {eu3:.2e}, {eu4:.2e})"
    assert rate_p > 1.5, f"Pressure L2 rate {rate_p:.2f} (errors {ep3:.2e}, {ep4:.2e})"
    assert info["div_residual"] < 1e-8 * max(1.0, info["history"][0]), f"|B u| = {info['div_residual']:.3e}"
    print(f"  ✓ rates u {rate_u:.2f}, p {rate_p:.2f}; |B u| {info['div_residual']:.1e}")


def test_02_lu_and_cg_inner_solves_agree():
    results = []
    for inner in ("lu", "cg"):
        system = _build_system(2, inner=inner)
        c = interpolate(_blob, system.pressure_space)
        u, _, _ = stokes_solve(c, BoussinesqForce.constant(1e3), system)
        results.append(u.coefficients)
    diff = np.abs(results[0] - results[1]).max() / np.abs(results[0]).max()
    assert diff < 1e-6, f"LU and CG inner solves differ by {diff:.3e}"


# ─── Scenario 2: Boussinesq forcing ───────────────────────────────────────────


def test_03_velocity_is_linear_in_rayleigh_number():
    system = _build_system(2)
    c = interpolate(_blob, system.velocity_space)
    u1, _, _ = stokes_solve(c, BoussinesqForce.constant(1e3), system)
    u2, _, _ = stokes_solve(c, BoussinesqForce.constant(2e3), system)
    assert u1.max_norm() > 0.0
    assert np.allclose(u2.coefficients, 2.0 * u1.coefficients, rtol=1e-8, atol=1e-12)
    assert system.solves == 2
    print(f"  ✓ max|u| {u1.max_norm():.3e} at Ra=1e3 doubles at Ra=2e3")


def test_04_zero_rayleigh_gives_rest_state():
    system = _build_system(1)
    c = interpolate(_blob, system.velocity_space)
    u, p, info = stokes_solve(c, BoussinesqForce.constant(0.0), system)
    assert not u.coefficients.any() and not p.coefficients.any()
    assert info["niter"] == 0


def test_05_free_slip_blocks_normal_flow_only():
    system = _build_system(2, BoundaryTag.FREE_SLIP)
    c = interpolate(_blob, system.velocity_space)
    u, _, _ = stokes_solve(c, BoussinesqForce.constant(1e3), system)
    space = system.velocity_space
    bottom, left = space.boundary_dofs(("bottom",)), space.boundary_dofs(("left",))
    assert not u.coefficients[bottom, 1].any(), "Normal velocity on the bottom must vanish"
    assert not u.coefficients[left, 0].any(), "Normal velocity on the left must vanish"
    tangential = np.abs(u.coefficients[bottom, 0]).max()
    assert tangential > 1e-6, f"Free-slip should allow tangential flow, got {tangential:.3e}"
    print(f"  ✓ tangential bottom velocity {tangential:.3e}, normal exactly zero")


# ─── Scenario 3: Invalid configurations ───────────────────────────────────────


def test_06_free_slip_on_curved_boundary_rejected():
    h = refine(annulus(0.5, 1.5, 12, 4), 1, AnnulusBlending(0.5, 1.5, 12))
    bc = VelocityBC({"inner": BoundaryTag.FREE_SLIP, "outer": BoundaryTag.NO_SLIP})
    with pytest.raises(ConfigurationError, match="axis-aligned"):
        StokesSystem.build(build_space(h, 2), build_space(h, 1), 1.0, bc)


@pytest.mark.parametrize("v_degree, mu, message", [(1, 1.0, "Taylor-Hood"), (2, 0.0, "Viscosity")])
def test_07_invalid_system_rejected(v_degree, mu, message):
    h = refine(unit_square(), 1)
    with pytest.raises(ConfigurationError, match=message):
        StokesSystem.build(build_space(h, v_degree), build_space(h, 1), mu, _bc())


def test_08_mismatched_hierarchies_rejected():
    v = build_space(refine(unit_square(), 1), 2)
    p = build_space(refine(unit_square(), 1), 1)
    with pytest.raises(ConfigurationError, match="share one hierarchy"):
        StokesSystem.build(v, p, 1.0, _bc())


def test_09_dirichlet_velocity_tag_rejected():
    with pytest.raises(ConfigurationError, match="unsupported kind"):
        VelocityBC({"top": BoundaryTag.DIRICHLET})


def test_10_schur_iteration_cap_raises_solver_error():
    system = _build_system(2)
    c = interpolate(_blob, system.velocity_space)
    with pytest.raises(SolverError, match="did not converge") as excinfo:
        stokes_solve(c, BoussinesqForce.constant(1e3), system, maxit=1)
    assert len(excinfo.value.residuals) == 2
