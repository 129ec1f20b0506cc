"""Diffusion nodes — full and half Theta-method steps of the work field."""

import logging
from typing import Any

from mmoc.graph.state import CoupledState
from mmoc.services.diffusion import diffusion_step

logger = logging.getLogger(__name__)


def _diffuse(state: CoupledState, t_old: float, tau: float) -> dict[str, Any]:
    ctx = state["context"]
    if ctx.theta_system is None:
        return {}
    system = ctx.theta_system.with_tau(tau)
    before = ctx.counters.diffusion.iterations
    c_new = diffusion_step(state["c_work"], system, ctx.source, ctx.boundary, t_old, t_old + tau,
                           ctx.counters.diffusion)
    diagnostics = dict(state["diagnostics"])
    diagnostics["cg_iterations"] = diagnostics.get("cg_iterations", 0) + ctx.counters.diffusion.iterations - before
    return {"c_work": c_new, "diagnostics": diagnostics}


def diffuse_node(state: CoupledState) -> dict[str, Any]:
    """Diffusion over the whole step [t_n, t_n + tau]."""
    return _diffuse(state, state["t"], state["tau"])


def diffuse_first_half_node(state: CoupledState) -> dict[str, Any]:
    """Diffusion over [t_n, t_n + tau/2]."""
    t = state["t"]
    return _diffuse(state, t, 0.5 * state["tau"])


def diffuse_second_half_node(state: CoupledState) -> dict[str, Any]:
    """Diffusion over [t_n + tau/2, t_n + tau]."""
    t = state["t"]
    return _diffuse(state, t + 0.5 * state["tau"], 0.5 * state["tau"])
