"""Taylor-Hood (P2-P1) Stokes system with Boussinesq forcing.

The saddle-point system [K B^T; B 0][u; p] = [f; 0] is reduced to the
pressure Schur complement S = B K^-1 B^T, solved by CG preconditioned with
the pressure mass matrix.  Inner solves with the constrained viscous block
use a sparse LU factorization computed once per system.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from mmoc.config import get_settings
from mmoc.errors import ConfigurationError, SolverError
from mmoc.services.diffusion import cg_solve
from mmoc.services.fem import (
    FunctionSpace,
    ScalarField,
    VectorField,
    assemble,
    basis_values,
    element_quadrature,
)
from mmoc.services.mesh import BoundaryTag
from mmoc.services.quadrature import rule_for_degree

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoussinesqForce:
    """F(c) = Ra * c * g with a unit gravity direction field g(x)."""

    rayleigh: float
    gravity: Callable[[np.ndarray], np.ndarray]

    @classmethod
    def constant(cls, rayleigh: float, direction: tuple[float, ...] = (0.0, 1.0)) -> "BoussinesqForce":
        g = np.asarray(direction, dtype=float)
        g = g / np.linalg.norm(g)
        return cls(rayleigh, lambda x: np.broadcast_to(g, x.shape))

    @classmethod
    def radial(cls, rayleigh: float) -> "BoussinesqForce":
        """Unit outward radial direction, for annulus geometries."""
        return cls(rayleigh, lambda x: x / np.linalg.norm(x, axis=1, keepdims=True))


@dataclass(frozen=True)
class VelocityBC:
    """Boundary label -> ``BoundaryTag.NO_SLIP`` or ``BoundaryTag.FREE_SLIP``."""

    kinds: dict[str, BoundaryTag] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for label, tag in self.kinds.items():
            if tag not in (BoundaryTag.NO_SLIP, BoundaryTag.FREE_SLIP):
                raise ConfigurationError(f"Velocity boundary {label!r} has unsupported kind {tag}")


def _facet_normal_axis(points: np.ndarray) -> int:
    """Axis of the unit normal of an axis-aligned facet.

    Raises:
        ConfigurationError: If the facet is not axis-aligned.
    """
    spread = np.ptp(points, axis=0)
    scale = float(spread.max()) or 1.0
    flat = np.flatnonzero(spread <= 1e-12 * scale)
    if flat.size != 1:
        raise ConfigurationError("Free-slip is only supported on axis-aligned boundary facets")
    return int(flat[0])


def assemble_force(c: ScalarField, force: BoussinesqForce, velocity_space: FunctionSpace) -> np.ndarray:
    """Load vector (Ra c g, v_h), component-major: entry ``k * n + a``.

    ``c`` may live on another space of the same hierarchy; it is evaluated at
    the velocity quadrature points through its own basis.
    """
    n, d = velocity_space.n_dofs, velocity_space.dim
    out = np.zeros(d * n)
    if force.rayleigh == 0.0:
        return out
    rule = rule_for_degree(d, velocity_space.degree)
    c_values = basis_values(c.space.degree, rule.barycentric)
    for q in element_quadrature(velocity_space, rule):
        cq = c.coefficients[c.space.element_dofs[q.elements]] @ c_values.T
        g = force.gravity(q.points.reshape(-1, d)).reshape(q.points.shape)
        dofs = velocity_space.element_dofs[q.elements]
        for k in range(d):
            local = np.einsum("eq,qa->ea", force.rayleigh * q.weights * cq * g[:, :, k], q.values)
            np.add.at(out, k * n + dofs, local)
    return out


def assemble_vector_load(velocity_space: FunctionSpace, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Component-major load vector (f, v_h) for a vector function of the physical point."""
    n, d = velocity_space.n_dofs, velocity_space.dim
    out = np.zeros(d * n)
    for q in element_quadrature(velocity_space):
        fq = np.asarray(f(q.points.reshape(-1, d)), dtype=float).reshape(q.points.shape)
        dofs = velocity_space.element_dofs[q.elements]
        for k in range(d):
            np.add.at(out, k * n + dofs, np.einsum("eq,qa->ea", q.weights * fq[:, :, k], q.values))
    return out


@dataclass
class StokesSystem:
    """Assembled Taylor-Hood blocks with boundary constraints.

    Attributes:
        velocity_space: P2 space (one scalar space shared by all components).
        pressure_space: P1 space.
        mu: Constant viscosity.
        bc: Velocity boundary conditions.
        K: Viscous block from 2 mu eps(u):eps(v), component-major.
        B: Divergence block -(div v, q).
        Mp: Pressure mass matrix.
        constrained: Mask of constrained velocity unknowns.
        inner: ``"lu"`` (factor K_ff once) or ``"cg"``.
    """

    velocity_space: FunctionSpace
    pressure_space: FunctionSpace
    mu: float
    bc: VelocityBC
    K: sp.csr_matrix
    B: sp.csr_matrix
    Mp: sp.csr_matrix
    constrained: np.ndarray
    inner: Literal["lu", "cg"] = "lu"
    solves: int = 0
    _factors: dict[str, Any] = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, velocity_space: FunctionSpace, pressure_space: FunctionSpace, mu: float,
              bc: VelocityBC, inner: Literal["lu", "cg"] = "lu") -> "StokesSystem":
        """Assemble K, B and M_p and apply the velocity boundary conditions.

        Raises:
            ConfigurationError: On mismatched spaces, free-slip on a non-axis-aligned
                facet, or a viscosity that is not positive.
        """
        if velocity_space.hierarchy is not pressure_space.hierarchy:
            raise ConfigurationError("Velocity and pressure spaces must share one hierarchy")
        if velocity_space.degree != 2 or pressure_space.degree != 1:
            raise ConfigurationError("Taylor-Hood needs P2 velocity and P1 pressure")
        if mu <= 0.0:
            raise ConfigurationError(f"Viscosity must be positive, got {mu}")
        K = _assemble_viscous(velocity_space, mu)
        B = _assemble_divergence(velocity_space, pressure_space)
        Mp = assemble(pressure_space, "mass").matrix
        constrained = _constrained_mask(velocity_space, bc)
        logger.info(
            "Stokes system — velocity_dofs=%d pressure_dofs=%d constrained=%d",
            K.shape[0], B.shape[0], int(constrained.sum()),
        )
        return cls(velocity_space, pressure_space, mu, bc, K, B, Mp, constrained, inner)

    @property
    def free(self) -> np.ndarray:
        return np.flatnonzero(~self.constrained)

    def _blocks(self) -> tuple[sp.csc_matrix, sp.csr_matrix]:
        if "K_ff" not in self._factors:
            free = self.free
            self._factors["K_ff"] = self.K[free][:, free].tocsc()
            self._factors["B_f"] = self.B[:, free].tocsr()
        return self._factors["K_ff"], self._factors["B_f"]

    def _inner_solve(self, rhs: np.ndarray) -> np.ndarray:
        K_ff, _ = self._blocks()
        if self.inner == "lu":
            if "lu" not in self._factors:
                self._factors["lu"] = spla.splu(K_ff)
            return self._factors["lu"].solve(rhs)
        x, _ = cg_solve(K_ff, rhs, tol=1e-14, maxit=10 * K_ff.shape[0])
        return x

    def _mass_solve(self, rhs: np.ndarray) -> np.ndarray:
        if "Mp_lu" not in self._factors:
            self._factors["Mp_lu"] = spla.splu(self.Mp.tocsc())
        return self._factors["Mp_lu"].solve(rhs)


def _assemble_viscous(space: FunctionSpace, mu: float) -> sp.csr_matrix:
    n, d, nloc = space.n_dofs, space.dim, space.n_local
    rows, cols, data = [], [], []
    eye = np.eye(d)
    for q in element_quadrature(space, gradients=True):
        G = q.gradients
        lap = np.einsum("eq,eqai,eqbi->eab", q.weights, G, G)
        cross = np.einsum("eq,eqal,eqbk->eakbl", q.weights, G, G)
        local = mu * (lap[:, :, None, :, None] * eye[None, None, :, None, :] + cross)
        dofs = space.element_dofs[q.elements]
        idx = (np.arange(d)[None, None, :] * n + dofs[:, :, None]).reshape(len(dofs), nloc * d)
        local = local.reshape(len(dofs), nloc * d, nloc * d)
        rows.append(np.broadcast_to(idx[:, :, None], local.shape).ravel())
        cols.append(np.broadcast_to(idx[:, None, :], local.shape).ravel())
        data.append(local.ravel())
    K = sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(d * n, d * n)).tocsr()
    return ((K + K.T) * 0.5).tocsr()


def _assemble_divergence(velocity_space: FunctionSpace, pressure_space: FunctionSpace) -> sp.csr_matrix:
    n, d = velocity_space.n_dofs, velocity_space.dim
    rule = rule_for_degree(d, 2)
    psi = basis_values(1, rule.barycentric)
    rows, cols, data = [], [], []
    for q in element_quadrature(velocity_space, rule, gradients=True):
        local = -np.einsum("eq,qi,eqak->eiak", q.weights, psi, q.gradients)
        p_dofs = pressure_space.element_dofs[q.elements]
        v_dofs = velocity_space.element_dofs[q.elements]
        v_idx = np.arange(d)[None, None, :] * n + v_dofs[:, :, None]
        rows.append(np.broadcast_to(p_dofs[:, :, None, None], local.shape).ravel())
        cols.append(np.broadcast_to(v_idx[:, None, :, :], local.shape).ravel())
        data.append(local.ravel())
    return sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(pressure_space.n_dofs, d * n)).tocsr()


def _constrained_mask(space: FunctionSpace, bc: VelocityBC) -> np.ndarray:
    n, d = space.n_dofs, space.dim
    mask = np.zeros(d * n, dtype=bool)
    hierarchy = space.hierarchy
    for facet, label in enumerate(hierarchy.coarse.boundary_labels):
        kind = bc.kinds.get(label)
        if kind is None:
            continue
        on = space.facet_dofs(facet)
        if kind is BoundaryTag.NO_SLIP:
            for k in range(d):
                mask[k * n : (k + 1) * n] |= on
        else:
            axis = _facet_normal_axis(hierarchy.boundary_facet_points[facet])
            mask[axis * n : (axis + 1) * n] |= on
    return mask


def stokes_solve(
    c: ScalarField,
    force: BoussinesqForce,
    system: StokesSystem,
    rhs: np.ndarray | None = None,
    tol: float | None = None,
    maxit: int | None = None,
) -> tuple[VectorField, ScalarField, dict[str, Any]]:
    """Solve the Stokes system with forcing Ra c g (or an explicit ``rhs``).

    Args:
        c: Temperature field on a space of the same hierarchy.
        force: Boussinesq forcing.
        system: Assembled system; its ``bc`` defines the velocity constraints.
        rhs: Optional component-major load vector replacing the Boussinesq force.
        tol: Relative residual tolerance of the Schur CG.
        maxit: Iteration cap of the Schur CG.

    Returns:
        Velocity, zero-mean pressure and an info dict (``niter``, ``history``,
        ``div_residual``).

    Raises:
        SolverError: If the Schur-complement CG stagnates.
    """
    settings = get_settings()
    tol = settings.stokes_tol if tol is None else tol
    maxit = settings.stokes_maxit if maxit is None else maxit
    vspace, pspace = system.velocity_space, system.pressure_space
    n, d = vspace.n_dofs, vspace.dim
    f = assemble_force(c, force, vspace) if rhs is None else np.asarray(rhs, dtype=float)
    free = system.free
    _, B_f = system._blocks()
    f_f = f[free]

    ones = np.ones(pspace.n_dofs)
    mp_ones = system.Mp @ ones
    volume = float(ones @ mp_ones)

    def project(v: np.ndarray) -> np.ndarray:
        return v - (mp_ones @ v) / volume * ones

    def schur(v: np.ndarray) -> np.ndarray:
        return B_f @ system._inner_solve(B_f.T @ v)

    g = B_f @ system._inner_solve(f_f)
    g = g - (g.sum() / len(g)) * ones
    p = np.zeros(pspace.n_dofs)
    history = [float(np.linalg.norm(g))]
    g_norm = history[0]
    it = 0
    if g_norm > 0.0:
        r = g.copy()
        z = project(system._mass_solve(r))
        direction = z.copy()
        rz = float(r @ z)
        converged = False
        for it in range(1, maxit + 1):
            s_dir = schur(direction)
            alpha = rz / float(direction @ s_dir)
            p += alpha * direction
            r -= alpha * s_dir
            res = float(np.linalg.norm(r))
            history.append(res)
            if res <= tol * g_norm:
                converged = True
                break
            z = project(system._mass_solve(r))
            rz_new = float(r @ z)
            direction = z + (rz_new / rz) * direction
            rz = rz_new
        if not converged:
            raise SolverError(
                f"Stokes Schur CG did not converge in {maxit} iterations "
                f"(residual {history[-1]:.3e}, target {tol * g_norm:.3e})",
                history,
            )

    p = project(p)
    u = np.zeros(d * n)
    u[free] = system._inner_solve(f_f - B_f.T @ p)
    div = float(np.linalg.norm(system.B @ u))
    system.solves += 1
    info = {"niter": it, "history": history, "div_residual": div}
    logger.debug("Stokes solve — iterations=%d div_residual=%.3e", it, div)
    velocity = VectorField(vspace, u.reshape(d, n).T.copy(), c.time)
    pressure = ScalarField(pspace, p, c.time)
    return velocity, pressure, info
