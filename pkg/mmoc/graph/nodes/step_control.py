"""Step-size node — fixed or CFL-driven tau, shortened to land on the final time."""

import logging
from typing import Any

from mmoc.graph.state import CoupledState, StepControl
from mmoc.services.fem import VectorField

logger = logging.getLogger(__name__)

END_SNAP = 1e-9


def cfl_dt(u: VectorField, ctrl: StepControl) -> float:
    """CFL * h_min / max|u|, with max|u| over the velocity DoF values.

    Args:
        u: Velocity at the start of the step.
        ctrl: Step policy; ``ctrl.tau`` is returned when max|u| = 0.

    Returns:
        The step length.
    """
    u_max = u.max_norm()
    if u_max == 0.0:
        return ctrl.tau
    return ctrl.cfl * ctrl.h_min / u_max


def step_size_node(state: CoupledState) -> dict[str, Any]:
    """Pick tau for the step starting at ``state["t"]``.

    Prescribed flows get u(t_n) from the context's velocity provider; coupled
    problems use the Stokes velocity already in the state.

    Returns:
        ``tau``, ``cfl``, the step's velocity and a fresh work field and diagnostics.
    """
    ctx = state["context"]
    ctrl = ctx.control
    t = state["t"]
    u = ctx.velocity(t) if ctx.velocity is not None else state["u"]
    if u is None:
        raise ValueError("No velocity available at the start of the step")

    tau = cfl_dt(u, ctrl) if ctrl.policy == "cfl" else ctrl.tau
    remaining = ctrl.t_end - t
    if remaining <= 0.0:
        raise ValueError(f"Step requested at t={t} beyond t_end={ctrl.t_end}")
    if tau >= remaining * (1.0 - END_SNAP):
        tau = remaining
    u_max = u.max_norm()
    cfl = tau * u_max / ctrl.h_min
    logger.debug("Step size — n=%d t=%.6f tau=%.4e cfl=%.3f", state["n"], t, tau, cfl)
    return {
        "u": u,
        "tau": tau,
        "cfl": cfl,
        "c_work": state["c"],
        "c_hat": None,
        "c_predicted": None,
        "scratch": False,
        "diagnostics": {"migrated": 0, "clamps": 0, "escalations": 0, "cg_iterations": 0},
    }
