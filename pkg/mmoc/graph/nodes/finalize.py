"""Finalize node — advance time and publish the step's result."""

import logging
from typing import Any

from mmoc.graph.state import CoupledState

logger = logging.getLogger(__name__)


def finalize_node(state: CoupledState) -> dict[str, Any]:
    """Move ``c_work`` and ``u_next`` into place at t_{n+1}.

    Returns:
        ``c``, ``u``, ``t`` and ``n`` of the completed step.
    """
    ctx = state["context"]
    t_new = state["t"] + state["tau"]
    n_new = state["n"] + 1
    c_new = state["c_work"].copy(time=t_new)
    ctx.counters.steps += 1

    diagnostics = state["diagnostics"]
    logger.info(
        "Step n=%d t=%.6f tau=%.4e cfl=%.3f cg_iterations=%d migrated=%d",
        n_new, t_new, state["tau"], state["cfl"], diagnostics.get("cg_iterations", 0),
        diagnostics.get("migrated", 0),
    )
    if diagnostics.get("clamps", 0) or diagnostics.get("escalations", 0):
        logger.warning(
            "Step n=%d clamped %d particles onto the boundary, %d global-scan escalations",
            n_new, diagnostics.get("clamps", 0), diagnostics.get("escalations", 0),
        )
    return {"c": c_new, "u": state["u_next"], "t": t_new, "n": n_new}
