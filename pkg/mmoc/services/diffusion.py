"""Theta-method diffusion step and the Jacobi-preconditioned CG it solves with."""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.sparse as sp

from mmoc.config import get_settings
from mmoc.errors import SolverError
from mmoc.services.fem import FunctionSpace, ScalarField, SparseOperator, assemble, assemble_load

logger = logging.getLogger(__name__)

BoundaryValues = Callable[[np.ndarray, float], np.ndarray]


def cg_solve(
    E: sp.spmatrix,
    rhs: np.ndarray,
    x0: np.ndarray | None = None,
    tol: float | None = None,
    maxit: int | None = None,
) -> tuple[np.ndarray, dict[str, Any]]:
    """Conjugate gradients with diagonal (Jacobi) preconditioning.

    Stops when ||r||_2 <= tol * ||rhs||_2; returns ``x0`` untouched when it
    already satisfies the criterion.

    Args:
        E: Symmetric positive definite matrix.
        rhs: Right-hand side.
        x0: Initial guess (zeros when omitted).
        tol: Relative residual tolerance (settings default).
        maxit: Iteration cap (settings factor times sqrt(n) when omitted).

    Returns:
        The solution and an info dict with ``niter``, ``success``,
        ``res_norm`` and ``history``.

    Raises:
        SolverError: If the tolerance is not met within ``maxit`` iterations.
    """
    settings = get_settings()
    n = len(rhs)
    tol = settings.cg_tol if tol is None else tol
    maxit = maxit or max(1, int(math.ceil(settings.cg_maxit_factor * math.sqrt(max(n, 1)))))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)

    b_norm = float(np.linalg.norm(rhs))
    if b_norm == 0.0:
        return np.zeros(n), {"niter": 0, "success": True, "res_norm": 0.0, "history": [0.0]}

    diag = E.diagonal()
    inv_diag = np.where(diag != 0.0, 1.0 / np.where(diag != 0.0, diag, 1.0), 1.0)
    r = rhs - E @ x
    res = float(np.linalg.norm(r))
    history = [res]
    if res <= tol * b_norm:
        return x, {"niter": 0, "success": True, "res_norm": res, "history": history}

    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, maxit + 1):
        Ep = E @ p
        alpha = rz / float(p @ Ep)
        x += alpha * p
        r -= alpha * Ep
        res = float(np.linalg.norm(r))
        history.append(res)
        if res <= tol * b_norm:
            return x, {"niter": it, "success": True, "res_norm": res, "history": history}
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new

    raise SolverError(
        f"CG did not converge in {maxit} iterations (residual {res:.3e}, target {tol * b_norm:.3e})",
        history,
    )


@dataclass
class SourceTerm:
    """Internal heat production q(x, t) and its load vectors (q(t), v_h)."""

    space: FunctionSpace
    q: Callable[[np.ndarray, float], np.ndarray] | None = None
    steady: bool = True
    _cache: dict[float, np.ndarray] = field(default_factory=dict, repr=False)

    def load(self, t: float) -> np.ndarray:
        if self.q is None:
            return np.zeros(self.space.n_dofs)
        key = 0.0 if self.steady else float(t)
        if key not in self._cache:
            self._cache[key] = assemble_load(self.space, lambda x: self.q(x, t))
        return self._cache[key]


@dataclass
class ThetaSystem:
    """Operators of the Theta-method step: E = M + tau * Theta * kappa * A.

    Attributes:
        mass: Mass matrix M.
        stiffness: Stiffness matrix A.
        kappa: Diffusivity.
        theta: Implicitness, 1 for implicit Euler and 0.5 for Crank-Nicolson.
        tau: Current step length.
        dirichlet_mask: DoFs eliminated with prescribed values.
    """

    mass: SparseOperator
    stiffness: SparseOperator
    kappa: float
    theta: float
    tau: float
    dirichlet_mask: np.ndarray
    _cache: dict[str, Any] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.kappa < 0.0:
            raise ValueError(f"Diffusivity must be non-negative, got {self.kappa}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"Theta must lie in [0, 1], got {self.theta}")

    @classmethod
    def build(cls, space: FunctionSpace, kappa: float, theta: float, tau: float = 1.0) -> "ThetaSystem":
        return cls(assemble(space, "mass"), assemble(space, "stiffness"), kappa, theta, tau,
                   space.dirichlet_mask.copy())

    def with_tau(self, tau: float) -> "ThetaSystem":
        """Same operators at another step length (cached matrices are per tau)."""
        if tau == self.tau:
            return self
        self.tau = tau
        self._cache.clear()
        return self

    @property
    def E(self) -> sp.csr_matrix:
        if "E" not in self._cache:
            self._cache["E"] = (self.mass.matrix + (self.tau * self.theta * self.kappa) * self.stiffness.matrix).tocsr()
        return self._cache["E"]

    @property
    def explicit(self) -> sp.csr_matrix:
        """M - tau (1 - Theta) kappa A."""
        if "explicit" not in self._cache:
            coeff = self.tau * (1.0 - self.theta) * self.kappa
            self._cache["explicit"] = (self.mass.matrix - coeff * self.stiffness.matrix).tocsr()
        return self._cache["explicit"]

    def partitioned(self) -> tuple[sp.csr_matrix, sp.csr_matrix, np.ndarray, np.ndarray]:
        """(E_ff, E_fD, free indices, Dirichlet indices)."""
        if "split" not in self._cache:
            free = np.flatnonzero(~self.dirichlet_mask)
            fixed = np.flatnonzero(self.dirichlet_mask)
            E = self.E
            self._cache["split"] = (E[free][:, free].tocsr(), E[free][:, fixed].tocsr(), free, fixed)
        return self._cache["split"]


@dataclass
class DiffusionStats:
    solves: int = 0
    iterations: int = 0
    last_residual: float = 0.0


def diffusion_step(
    c_hat: ScalarField,
    system: ThetaSystem,
    source: SourceTerm | None = None,
    boundary: BoundaryValues | None = None,
    t_old: float | None = None,
    t_new: float | None = None,
    stats: DiffusionStats | None = None,
) -> ScalarField:
    """Solve E c^{n+1} = (M - tau(1-Theta) kappa A) c_hat + tau (Theta q^{n+1} + (1-Theta) q^n).

    Dirichlet DoFs are eliminated: their values g(x, t_new) are moved to the
    right-hand side and the remaining SPD block is solved by :func:`cg_solve`
    starting from ``c_hat``.

    Args:
        c_hat: Advected field (t_new is taken from its time when omitted).
        system: Theta-method operators at the current step length.
        source: Optional heat source.
        boundary: Dirichlet values g(x, t); required when the system has Dirichlet DoFs.
        t_old: Start of the step; defaults to ``t_new - tau``.
        t_new: End of the step.
        stats: Optional counters updated in place.

    Raises:
        ValueError: If Dirichlet DoFs exist but no boundary values are given.
        SolverError: Propagated from CG.
    """
    if system.tau <= 0.0:
        raise ValueError(f"Diffusion step needs tau > 0, got {system.tau}")
    t_new = c_hat.time if t_new is None else t_new
    t_old = t_new - system.tau if t_old is None else t_old
    tau, theta = system.tau, system.theta

    rhs = system.explicit @ c_hat.coefficients
    if source is not None and source.q is not None:
        rhs = rhs + tau * (theta * source.load(t_new) + (1.0 - theta) * source.load(t_old))

    E_ff, E_fD, free, fixed = system.partitioned()
    out = c_hat.coefficients.copy()
    if fixed.size:
        if boundary is None:
            raise ValueError("Dirichlet DoFs present but no boundary values supplied")
        coords = c_hat.space.coordinates[fixed]
        out[fixed] = np.broadcast_to(np.asarray(boundary(coords, t_new), dtype=float), (fixed.size,))
        rhs_f = rhs[free] - E_fD @ out[fixed]
    else:
        rhs_f = rhs[free]

    x, info = cg_solve(E_ff, rhs_f, x0=c_hat.coefficients[free])
    out[free] = x
    if stats is not None:
        stats.solves += 1
        stats.iterations += info["niter"]
        stats.last_residual = info["res_norm"]
    logger.debug("Diffusion step — tau=%.3e iterations=%d residual=%.3e", tau, info["niter"], info["res_norm"])
    return ScalarField(c_hat.space, out, t_new)
