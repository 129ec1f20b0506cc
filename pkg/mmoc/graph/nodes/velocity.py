"""Velocity node — prescribed velocity at both ends of the step."""

import logging
from typing import Any

from mmoc.graph.state import CoupledState
from mmoc.services.transport import VelocityPair

logger = logging.getLogger(__name__)


def velocity_node(state: CoupledState) -> dict[str, Any]:
    """Evaluate the context's velocity provider at t_{n+1} and pair it with u(t_n).

    Steady providers return the same field object for every time, which makes
    the pair (and the velocity history) time-invariant.

    Returns:
        ``u_next`` and ``velocity_pair``.
    """
    ctx = state["context"]
    if ctx.velocity is None:
        raise ValueError("velocity_node needs a prescribed velocity provider")
    t, tau = state["t"], state["tau"]
    u_next = ctx.velocity(t + tau)
    return {"u_next": u_next, "velocity_pair": VelocityPair(state["u"], u_next, t, t + tau)}
