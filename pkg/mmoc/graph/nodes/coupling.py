"""Predictor and corrector sweeps of the temperature-Stokes coupling."""

import logging
from typing import Any

from mmoc.graph.state import CoupledState
from mmoc.graph.sweep import run_ads_sweep
from mmoc.services.transport import VelocityPair

logger = logging.getLogger(__name__)


def ads_sweep_node(state: CoupledState) -> dict[str, Any]:
    """One Strang sweep from c^n over the step's velocity pair."""
    result = run_ads_sweep(state, state["c"], state["velocity_pair"])
    return {"c_work": result["c_work"], "c_hat": result["c_hat"], "diagnostics": result["diagnostics"]}


def predictor_node(state: CoupledState) -> dict[str, Any]:
    """Sweep from c^n with the velocity frozen at u^n.

    Returns:
        ``c_predicted`` and the sweep's diagnostics.
    """
    t, tau, u = state["t"], state["tau"], state["u"]
    frozen = VelocityPair(u, u, t, t + tau)
    result = run_ads_sweep(state, state["c"], frozen, scratch=True)
    return {"c_predicted": result["c_work"], "diagnostics": result["diagnostics"]}


def corrector_node(state: CoupledState) -> dict[str, Any]:
    """Sweep from c^n with the velocity interpolated between u^n and u^pr.

    The corrector restarts from the step's initial temperature, never from
    the predicted one.

    Returns:
        ``c_work`` (the corrected temperature), ``velocity_pair`` and diagnostics.
    """
    c_start = state["c"]
    if c_start is state["c_predicted"]:
        raise RuntimeError("Corrector must start from c^n, not from the predicted temperature")
    t, tau = state["t"], state["tau"]
    pair = VelocityPair(state["u"], state["u_next"], t, t + tau)
    result = run_ads_sweep(state, c_start, pair)
    return {
        "c_work": result["c_work"],
        "c_hat": result["c_hat"],
        "velocity_pair": pair,
        "diagnostics": result["diagnostics"],
    }
