"""Advection node — departure points and look-back evaluation of the work field."""

import logging
from typing import Any

from mmoc.graph.state import CoupledState
from mmoc.services.transport import LookBackBuffer, VelocityHistory, mmoc_advect

logger = logging.getLogger(__name__)


def advect_node(state: CoupledState) -> dict[str, Any]:
    """Advect ``c_work`` over the state's velocity interval.

    The work field is recorded as the source of this step before the
    characteristics are followed back.  Scratch sweeps (the predictor) use a
    depth-one buffer so they leave the persistent look-back state untouched.

    Returns:
        The advected field as both ``c_hat`` and the new ``c_work``, plus
        updated exchange diagnostics.
    """
    ctx = state["context"]
    vp = state["velocity_pair"]
    if state["scratch"]:
        buffer = LookBackBuffer(ctx.space, 1, ctx.buffer.layout)
        history = VelocityHistory(1)
    else:
        buffer, history = ctx.buffer, ctx.history

    buffer.record(state["c_work"])
    history.push(vp)
    c_hat = mmoc_advect(buffer, history, ctx.rk, state["tau"])

    stats = buffer.last_stats
    ctx.counters.advections += 1
    ctx.counters.exchange.merge(stats)
    diagnostics = dict(state["diagnostics"])
    diagnostics["migrated"] = diagnostics.get("migrated", 0) + stats.migrated
    diagnostics["clamps"] = diagnostics.get("clamps", 0) + stats.clamps
    diagnostics["escalations"] = diagnostics.get("escalations", 0) + stats.escalations
    return {"c_hat": c_hat, "c_work": c_hat, "diagnostics": diagnostics}
