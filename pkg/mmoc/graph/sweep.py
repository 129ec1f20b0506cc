"""Strang-split advection-diffusion sweep: half diffusion, full advection, half diffusion."""

import logging

from langgraph.graph import END, START, StateGraph

from mmoc.graph.nodes.advection import advect_node
from mmoc.graph.nodes.diffusion import diffuse_first_half_node, diffuse_second_half_node
from mmoc.graph.state import CoupledState
from mmoc.services.fem import ScalarField
from mmoc.services.transport import VelocityPair

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------

sweep_builder = StateGraph(CoupledState)

sweep_builder.add_node("diffuse_first_half", diffuse_first_half_node)
sweep_builder.add_node("advect", advect_node)
sweep_builder.add_node("diffuse_second_half", diffuse_second_half_node)

sweep_builder.add_edge(START, "diffuse_first_half")
sweep_builder.add_edge("diffuse_first_half", "advect")
sweep_builder.add_edge("advect", "diffuse_second_half")
sweep_builder.add_edge("diffuse_second_half", END)

ads_sweep_graph = sweep_builder.compile()

# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


def run_ads_sweep(
    state: CoupledState,
    c_start: ScalarField,
    velocity_pair: VelocityPair,
    scratch: bool = False,
) -> CoupledState:
    """Run one sweep from ``c_start`` over ``velocity_pair``.

    Args:
        state: State of the step in progress (time, tau, context, diagnostics).
        c_start: Temperature the sweep starts from.
        velocity_pair: Velocity interval of the advection.
        scratch: Leave the context's look-back buffer untouched.

    Returns:
        The sweep's final state; the result is ``c_work``.
    """
    sweep_input: CoupledState = {
        **state,
        "c_work": c_start,
        "velocity_pair": velocity_pair,
        "scratch": scratch,
    }
    result = ads_sweep_graph.invoke(sweep_input)
    state["context"].counters.ads_sweeps += 1
    return result
