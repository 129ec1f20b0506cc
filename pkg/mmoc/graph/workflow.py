"""LangGraph workflows for one time step of the advection-diffusion schemes.

Three linear graphs are compiled once at import:

* ``ad``  — step size, velocity, advection, diffusion.
* ``ads`` — step size, velocity, Strang sweep (half diffusion, advection, half diffusion).
* ``pc``  — step size, predictor sweep, Stokes, corrector sweep, Stokes.
"""

import logging
from typing import Literal

from langgraph.graph import END, START, StateGraph

from mmoc.graph.nodes.advection import advect_node
from mmoc.graph.nodes.coupling import ads_sweep_node, corrector_node, predictor_node
from mmoc.graph.nodes.diffusion import diffuse_node
from mmoc.graph.nodes.finalize import finalize_node
from mmoc.graph.nodes.step_control import cfl_dt, step_size_node
from mmoc.graph.nodes.stokes import solve_velocity, stokes_correct_node, stokes_predict_node
from mmoc.graph.nodes.velocity import velocity_node
from mmoc.graph.state import CoupledState, SimulationContext
from mmoc.services.fem import ScalarField, VectorField

logger = logging.getLogger(__name__)

Scheme = Literal["ad", "ads", "pc"]

__all__ = ["Scheme", "ad_step", "ads_step", "cfl_dt", "initial_state", "pc_step", "run_step"]

# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------

ad_builder = StateGraph(CoupledState)
ad_builder.add_node("step_size", step_size_node)
ad_builder.add_node("velocity", velocity_node)
ad_builder.add_node("advect", advect_node)
ad_builder.add_node("diffuse", diffuse_node)
ad_builder.add_node("finalize", finalize_node)
ad_builder.add_edge(START, "step_size")
ad_builder.add_edge("step_size", "velocity")
ad_builder.add_edge("velocity", "advect")
ad_builder.add_edge("advect", "diffuse")
ad_builder.add_edge("diffuse", "finalize")
ad_builder.add_edge("finalize", END)

ads_builder = StateGraph(CoupledState)
ads_builder.add_node("step_size", step_size_node)
ads_builder.add_node("velocity", velocity_node)
ads_builder.add_node("ads_sweep", ads_sweep_node)
ads_builder.add_node("finalize", finalize_node)
ads_builder.add_edge(START, "step_size")
ads_builder.add_edge("step_size", "velocity")
ads_builder.add_edge("velocity", "ads_sweep")
ads_builder.add_edge("ads_sweep", "finalize")
ads_builder.add_edge("finalize", END)

pc_builder = StateGraph(CoupledState)
pc_builder.add_node("step_size", step_size_node)
pc_builder.add_node("predictor", predictor_node)
pc_builder.add_node("stokes_predict", stokes_predict_node)
pc_builder.add_node("corrector", corrector_node)
pc_builder.add_node("stokes_correct", stokes_correct_node)
pc_builder.add_node("finalize", finalize_node)
pc_builder.add_edge(START, "step_size")
pc_builder.add_edge("step_size", "predictor")
pc_builder.add_edge("predictor", "stokes_predict")
pc_builder.add_edge("stokes_predict", "corrector")
pc_builder.add_edge("corrector", "stokes_correct")
pc_builder.add_edge("stokes_correct", "finalize")
pc_builder.add_edge("finalize", END)

# Compile once at module level
ad_workflow = ad_builder.compile()
ads_workflow = ads_builder.compile()
pc_workflow = pc_builder.compile()

WORKFLOWS = {"ad": ad_workflow, "ads": ads_workflow, "pc": pc_workflow}

# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


def initial_state(
    c0: ScalarField,
    context: SimulationContext,
    u0: VectorField | None = None,
    t0: float | None = None,
) -> CoupledState:
    """State at the start of a run.

    Coupled problems (a Stokes system in the context, no ``u0``) get their
    initial velocity and pressure from a Stokes solve with the initial
    temperature; the pressure guess of that solve is zero.

    Args:
        c0: Initial temperature.
        context: Operators, buffers and counters of the run.
        u0: Initial velocity; defaults to the provider's u(t0) or the Stokes solve.
        t0: Start time; defaults to ``c0.time``.

    Returns:
        A fully populated :class:`CoupledState`.
    """
    t0 = c0.time if t0 is None else t0
    p0 = None
    if u0 is None:
        if context.velocity is not None:
            u0 = context.velocity(t0)
        elif context.stokes is not None:
            u0, p0, info = solve_velocity(context, c0)
            logger.info("Initial Stokes solve — iterations=%d div_residual=%.3e",
                        info["niter"], info["div_residual"])
    return {
        "c": c0,
        "u": u0,
        "u_next": None,
        "p": p0,
        "t": t0,
        "n": 0,
        "tau": context.control.tau,
        "cfl": 0.0,
        "velocity_pair": None,
        "c_work": None,
        "c_hat": None,
        "c_predicted": None,
        "scratch": False,
        "diagnostics": {},
        "context": context,
    }


def run_step(state: CoupledState, scheme: Scheme) -> CoupledState:
    """Advance ``state`` by one step of ``scheme``.

    Raises:
        ValueError: If the scheme is unknown or the state lacks what it needs.
    """
    try:
        workflow = WORKFLOWS[scheme]
    except KeyError as exc:
        raise ValueError(f"Unknown scheme {scheme!r}; expected one of {sorted(WORKFLOWS)}") from exc
    if scheme != "pc" and state["context"].velocity is None:
        raise ValueError(f"Scheme {scheme!r} needs a prescribed velocity provider")
    return workflow.invoke(state)


def ad_step(state: CoupledState) -> CoupledState:
    """Advection followed by one Theta-method diffusion step."""
    return run_step(state, "ad")


def ads_step(state: CoupledState) -> CoupledState:
    """Strang splitting: diffusion tau/2, advection tau, diffusion tau/2."""
    return run_step(state, "ads")


def pc_step(state: CoupledState) -> CoupledState:
    """Predictor-corrector coupling of temperature and Stokes flow.

    Both sweeps start from c^n; each is followed by a Stokes solve, so a step
    costs two Stokes solves, two sweeps and four diffusion solves.
    """
    return run_step(state, "pc")
