"""Shared state definition for the time-stepping LangGraph workflows."""

from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any, Literal, TypedDict

from mmoc.services.diffusion import BoundaryValues, DiffusionStats, SourceTerm, ThetaSystem
from mmoc.services.fem import FunctionSpace, ScalarField, VectorField
from mmoc.services.partition import ExchangeStats
from mmoc.services.stokes import BoussinesqForce, StokesSystem
from mmoc.services.transport import LookBackBuffer, RKScheme, VelocityHistory, VelocityPair

VelocityProvider = Callable[[float], VectorField]


@dataclass
class StepControl:
    """Time-step policy.

    Attributes:
        policy: ``"fixed"`` uses ``tau``; ``"cfl"`` uses CFL * h_min / max|u|.
        tau: Fixed step length, also the fallback when max|u| = 0.
        cfl: Target CFL number of the CFL policy.
        h_min: Shortest physical edge of the finest level.
        t_end: Final time; the last step is shortened to land on it.
    """

    policy: Literal["fixed", "cfl"] = "fixed"
    tau: float = 1e-2
    cfl: float = 1.0
    h_min: float = 1.0
    t_end: float = 1.0

    def __post_init__(self) -> None:
        if self.policy not in ("fixed", "cfl"):
            raise ValueError(f"Unknown step policy {self.policy!r}")
        if self.tau <= 0.0 or self.cfl <= 0.0 or self.h_min <= 0.0:
            raise ValueError("Step length, CFL number and h_min must be positive")


@dataclass
class StepCounters:
    """Work done since the context was created."""

    steps: int = 0
    stokes_solves: int = 0
    ads_sweeps: int = 0
    advections: int = 0
    diffusion: DiffusionStats = field(default_factory=DiffusionStats)
    exchange: ExchangeStats = field(default_factory=ExchangeStats)

    @property
    def diffusion_solves(self) -> int:
        return self.diffusion.solves


@dataclass
class SimulationContext:
    """Everything a step needs besides the evolving fields.

    Attributes:
        space: Temperature space (carries the Dirichlet mask).
        control: Step-size policy.
        rk: Backtracking scheme.
        buffer: Look-back buffer of recorded temperatures.
        history: Velocity intervals matching ``buffer``.
        theta_system: Diffusion operators, ``None`` for pure advection.
        source: Internal heat source.
        boundary: Dirichlet values g(x, t) of the temperature.
        velocity: Prescribed velocity u(t); ``None`` when Stokes provides it.
        stokes: Stokes system of the coupled problems.
        force: Boussinesq forcing of the coupled problems.
        counters: Accumulated work counters.
    """

    space: FunctionSpace
    control: StepControl
    rk: RKScheme
    buffer: LookBackBuffer
    history: VelocityHistory
    theta_system: ThetaSystem | None = None
    source: SourceTerm | None = None
    boundary: BoundaryValues | None = None
    velocity: VelocityProvider | None = None
    stokes: StokesSystem | None = None
    force: BoussinesqForce | None = None
    counters: StepCounters = field(default_factory=StepCounters)


class CoupledState(TypedDict):
    """Typed state passed through every node of the step graphs.

    Attributes:
        c: Temperature at ``t`` (the step's start until finalization).
        u: Velocity at ``t``.
        u_next: Velocity at ``t + tau`` (prescribed, or the Stokes prediction).
        p: Pressure at ``t`` (coupled problems only).
        t: Current time.
        n: Completed step count.
        tau: Length of the step in progress.
        cfl: CFL number of the step in progress.
        velocity_pair: Velocity interval used by the sweep in progress.
        c_work: Field a sweep is transforming.
        c_hat: Advected field of the latest sweep.
        c_predicted: Temperature of the predictor sweep.
        scratch: Advect with a throw-away look-back buffer (predictor sweeps).
        diagnostics: Per-step solver and exchange figures.
        context: Operators, buffers and counters.
    """

    c: ScalarField
    u: VectorField | None
    u_next: VectorField | None
    p: ScalarField | None
    t: float
    n: int
    tau: float
    cfl: float
    velocity_pair: VelocityPair | None
    c_work: ScalarField | None
    c_hat: ScalarField | None
    c_predicted: ScalarField | None
    scratch: bool
    diagnostics: dict[str, Any]
    context: SimulationContext
