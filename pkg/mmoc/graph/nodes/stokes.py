"""Stokes nodes — velocity and pressure from the Boussinesq-forced Stokes system."""

import logging
from typing import Any

from mmoc.graph.state import CoupledState, SimulationContext
from mmoc.services.fem import ScalarField, VectorField
from mmoc.services.stokes import stokes_solve

logger = logging.getLogger(__name__)


def solve_velocity(ctx: SimulationContext, c: ScalarField) -> tuple[VectorField, ScalarField, dict[str, Any]]:
    """Stokes solve with forcing Ra c g, counted on the context."""
    if ctx.stokes is None or ctx.force is None:
        raise ValueError("Coupled step needs a Stokes system and a Boussinesq force")
    u, p, info = stokes_solve(c, ctx.force, ctx.stokes)
    ctx.counters.stokes_solves += 1
    return u, p, info


def _record(state: CoupledState, info: dict[str, Any]) -> dict[str, Any]:
    diagnostics = dict(state["diagnostics"])
    diagnostics["stokes_iterations"] = diagnostics.get("stokes_iterations", 0) + info["niter"]
    diagnostics["div_residual"] = info["div_residual"]
    return diagnostics


def stokes_predict_node(state: CoupledState) -> dict[str, Any]:
    """u^pr from the predicted temperature."""
    u_pr, _, info = solve_velocity(state["context"], state["c_predicted"])
    return {"u_next": u_pr, "diagnostics": _record(state, info)}


def stokes_correct_node(state: CoupledState) -> dict[str, Any]:
    """u^{n+1} and p^{n+1} from the corrected temperature."""
    u, p, info = solve_velocity(state["context"], state["c_work"])
    logger.debug("Corrector Stokes — iterations=%d div_residual=%.3e", info["niter"], info["div_residual"])
    return {"u_next": u, "p": p, "diagnostics": _record(state, info)}
