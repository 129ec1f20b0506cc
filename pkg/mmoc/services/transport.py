"""Lagrangian step: particle creation, Runge-Kutta backtracking, look-back, evaluation.

Particles start at the DoFs at t_{n+1} and are integrated backwards in time
along the velocity, which is linearly interpolated between the two stored
time levels of a :class:`VelocityPair`.  Particle positions are
re-synchronized to the rank owning the containing macro volume after every
stage position and after the final position.
"""

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from mmoc.errors import ConfigurationError
from mmoc.services.fem import FunctionSpace, ScalarField, VectorField, evaluate, evaluate_located
from mmoc.services.mesh import MeshHierarchy
from mmoc.services.particles import ParticleSet
from mmoc.services.partition import ExchangeStats, PartitionLayout, partition_mesh, sync_particles

logger = logging.getLogger(__name__)

TIME_TOL = 1e-12
# Re-integration warnings repeat every this many steps
REINTEGRATION_WARN_EVERY = 100


# ---------------------------------------------------------------------------
# Runge-Kutta schemes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RKScheme:
    """Explicit Butcher tableau.

    Attributes:
        name: Registry name.
        a: ``(S, S)`` strictly lower-triangular stage matrix.
        b: ``(S,)`` weights, summing to one.
        c: ``(S,)`` nodes.
        order: Classical consistency order.
    """

    name: str
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    order: int

    def __post_init__(self) -> None:
        s = len(self.b)
        if self.a.shape != (s, s) or self.c.shape != (s,):
            raise ConfigurationError(f"Butcher tableau {self.name!r} has inconsistent shapes")
        if np.any(np.triu(self.a) != 0.0):
            raise ConfigurationError(f"Butcher tableau {self.name!r} is not explicit")
        if abs(float(self.b.sum()) - 1.0) > 1e-14:
            raise ConfigurationError(f"Weights of {self.name!r} do not sum to one")

    @property
    def stages(self) -> int:
        return len(self.b)


def rk4() -> RKScheme:
    a = np.zeros((4, 4))
    a[1, 0] = 0.5
    a[2, 1] = 0.5
    a[3, 2] = 1.0
    return RKScheme("rk4", a, np.array([1 / 6, 1 / 3, 1 / 3, 1 / 6]), np.array([0.0, 0.5, 0.5, 1.0]), 4)


def explicit_euler() -> RKScheme:
    return RKScheme("euler", np.zeros((1, 1)), np.array([1.0]), np.array([0.0]), 1)


def heun() -> RKScheme:
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    return RKScheme("heun", a, np.array([0.5, 0.5]), np.array([0.0, 1.0]), 2)


def ssp_rk3() -> RKScheme:
    a = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.25, 0.25, 0.0]])
    return RKScheme("rk3", a, np.array([1 / 6, 1 / 6, 2 / 3]), np.array([0.0, 1.0, 0.5]), 3)


RK_SCHEMES = {"rk4": rk4, "euler": explicit_euler, "heun": heun, "rk3": ssp_rk3}


def get_rk_scheme(name: str) -> RKScheme:
    """Look up a scheme by name.

    Raises:
        ConfigurationError: If the name is unknown.
    """
    try:
        return RK_SCHEMES[name.lower()]()
    except KeyError as exc:
        raise ConfigurationError(f"Unknown RK scheme {name!r}; known: {sorted(RK_SCHEMES)}") from exc


# ---------------------------------------------------------------------------
# Velocity in time
# ---------------------------------------------------------------------------


@dataclass
class VelocityPair:
    """Velocity at both ends of [t_old, t_new], linearly interpolated in between."""

    u_old: VectorField
    u_new: VectorField
    t_old: float
    t_new: float
    steady: bool = field(init=False)

    def __post_init__(self) -> None:
        if not self.t_old < self.t_new:
            raise ValueError(f"VelocityPair needs t_old < t_new, got {self.t_old} >= {self.t_new}")
        if self.u_old.space is not self.u_new.space:
            raise ValueError("Both velocity fields of a pair must share one space")
        self.steady = self.u_old is self.u_new or np.array_equal(
            self.u_old.coefficients, self.u_new.coefficients
        )

    @property
    def tau(self) -> float:
        return self.t_new - self.t_old

    def weights(self, t_star: float) -> tuple[float, float]:
        """Interpolation weights of u_old and u_new at ``t_star``.

        Raises:
            ValueError: If ``t_star`` lies outside the interval.
        """
        slack = TIME_TOL * max(1.0, abs(self.t_new))
        if t_star < self.t_old - slack or t_star > self.t_new + slack:
            raise ValueError(f"t*={t_star} outside [{self.t_old}, {self.t_new}]")
        t_star = min(max(t_star, self.t_old), self.t_new)
        span = self.t_new - self.t_old
        return (self.t_new - t_star) / span, (t_star - self.t_old) / span

    def located(self, element: np.ndarray, lam: np.ndarray, t_star: float) -> np.ndarray:
        """Interpolated velocity at already located points."""
        w_old, w_new = self.weights(t_star)
        if self.steady or w_new == 0.0:
            return evaluate_located(self.u_old, element, lam)
        if w_old == 0.0:
            return evaluate_located(self.u_new, element, lam)
        return w_old * evaluate_located(self.u_old, element, lam) + w_new * evaluate_located(
            self.u_new, element, lam
        )


def interp_velocity(vp: VelocityPair, y: np.ndarray, t_star: float, hint: np.ndarray | None = None) -> np.ndarray:
    """Velocity at physical point(s) ``y`` and time ``t_star`` in [t_old, t_new]."""
    w_old, w_new = vp.weights(t_star)
    if vp.steady or w_new == 0.0:
        return evaluate(vp.u_old, y, hint, clamp=True)
    if w_old == 0.0:
        return evaluate(vp.u_new, y, hint, clamp=True)
    return w_old * evaluate(vp.u_old, y, hint, clamp=True) + w_new * evaluate(vp.u_new, y, hint, clamp=True)


# ---------------------------------------------------------------------------
# Particles
# ---------------------------------------------------------------------------


@dataclass
class ParticleSwarm:
    """All particles of one space, split over the ranks of a layout."""

    hierarchy: MeshHierarchy
    layout: PartitionLayout
    n_dofs: int
    ranks: list[ParticleSet]
    stats: ExchangeStats = field(default_factory=ExchangeStats)

    def __len__(self) -> int:
        return sum(len(p) for p in self.ranks)

    def synchronize(self) -> ExchangeStats:
        self.ranks, step = sync_particles(self.ranks, self.layout, self.hierarchy)
        self.stats.merge(step)
        return step

    def gather(self) -> ParticleSet:
        """All particles ordered by DoF index."""
        merged = ParticleSet.concat(self.ranks)
        return merged.take(np.argsort(merged.dof_index, kind="stable"))


def create_particles(space: FunctionSpace, layout: PartitionLayout | None = None, stages: int = 4) -> ParticleSwarm:
    """One particle per DoF at its physical coordinate.

    Interface DoFs are assigned to their lowest-index adjacent macro volume,
    and each particle starts on the rank owning that volume.
    """
    hierarchy = space.hierarchy
    layout = layout or partition_mesh(hierarchy, 1)
    n, d = space.n_dofs, space.dim
    volume = space.numbering.owner_volume
    loc = hierarchy.locate_in_macro(space.computational_coordinates, volume)
    origin_primitive = space.dof_primitive
    everything = ParticleSet(
        dof_index=np.arange(n, dtype=np.int64),
        origin_primitive=origin_primitive,
        origin_rank=layout.primitive_rank[origin_primitive],
        start=space.coordinates.copy(),
        position=space.coordinates.copy(),
        volume=volume.copy(),
        element=loc.element,
        lam=loc.lam,
        stage_values=np.zeros((n, stages, d)),
        departure_value=np.full(n, np.nan),
    )
    owner = layout.volume_rank[volume]
    ranks = [everything.take(np.flatnonzero(owner == r)).sorted() for r in range(layout.n_ranks)]
    return ParticleSwarm(hierarchy, layout, n, ranks)


def backtrack(swarm: ParticleSwarm, vp: VelocityPair, rk: RKScheme, tau: float) -> ParticleSwarm:
    """Move every particle from its position at t_new to its departure point at t_old.

    Stage k uses y_k = x - tau * sum_j a_kj u_j at time t_new - c_k tau, and the
    final position is x - tau * sum_k b_k u_k.

    Raises:
        ValueError: If ``tau`` is not positive or does not match the pair's interval.
    """
    if tau <= 0.0:
        raise ValueError(f"Backtracking needs tau > 0, got {tau}")
    if abs(tau - vp.tau) > 1e-9 * tau:
        raise ValueError(f"tau={tau} does not match velocity interval length {vp.tau}")
    for particles in swarm.ranks:
        particles.start = particles.position.copy()
        particles.resize_stages(rk.stages)

    for s in range(rk.stages):
        if s > 0:
            for particles in swarm.ranks:
                increment = np.einsum("j,njk->nk", rk.a[s, :s], particles.stage_values[:, :s])
                particles.position = particles.start - tau * increment
            swarm.synchronize()
        t_star = vp.t_new - rk.c[s] * tau
        for particles in swarm.ranks:
            particles.stage_values[:, s] = vp.located(particles.element, particles.lam, t_star)

    for particles in swarm.ranks:
        increment = np.einsum("j,njk->nk", rk.b, particles.stage_values)
        particles.position = particles.start - tau * increment
    swarm.synchronize()
    return swarm


def evaluate_departure(swarm: ParticleSwarm, c: ScalarField, time: float | None = None) -> ScalarField:
    """Evaluate ``c`` at the particle positions and route the values to their DoFs.

    Raises:
        ValueError: If the swarm was not created on a space with ``c``'s DoF count.
    """
    if swarm.n_dofs != c.space.n_dofs:
        raise ValueError(f"Swarm has {swarm.n_dofs} particles but the field has {c.space.n_dofs} DoFs")
    out = np.empty(c.space.n_dofs)
    for rank, particles in enumerate(swarm.ranks):
        values = evaluate_located(c, particles.element, particles.lam)
        particles.departure_value = values
        swarm.stats.values_returned += int(np.count_nonzero(particles.origin_rank != rank))
        out[particles.dof_index] = values
    return ScalarField(c.space, out, c.time if time is None else time)


# ---------------------------------------------------------------------------
# Look-back
# ---------------------------------------------------------------------------


@dataclass
class VelocityHistory:
    """Velocity intervals needed to re-integrate characteristics, oldest first.

    ``autonomous`` stays true while every pushed interval carries the same
    time-constant velocity and the same step length.
    """

    capacity: int | None = None
    intervals: deque = field(default_factory=deque)
    autonomous: bool = True

    def __post_init__(self) -> None:
        self.intervals = deque(self.intervals, maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self.intervals)

    @property
    def latest(self) -> VelocityPair:
        return self.intervals[-1]

    def push(self, vp: VelocityPair) -> None:
        if self.autonomous:
            if not vp.steady:
                self.autonomous = False
            elif self.intervals:
                ref = self.intervals[0]
                same_field = vp.u_old is ref.u_old or np.array_equal(vp.u_old.coefficients, ref.u_old.coefficients)
                same_tau = abs(vp.tau - ref.tau) <= 1e-9 * ref.tau
                self.autonomous = bool(same_field and same_tau)
        self.intervals.append(vp)

    def last(self, k: int) -> list[VelocityPair]:
        return list(self.intervals)[-k:] if k else []


@dataclass
class LookBackBuffer:
    """Stored temperature fields for look-back distance b (``None`` = infinity).

    With finite b the ring keeps the last ``capacity`` recorded fields.  With
    b = infinity only the first recorded field (the initial condition) is kept
    together with a persistent particle swarm.
    """

    space: FunctionSpace
    lookback: int | None = 1
    layout: PartitionLayout | None = None
    capacity: int | None = None
    fields: deque = field(default_factory=deque)
    initial: ScalarField | None = None
    swarm: ParticleSwarm | None = None
    steps: int = 0
    reintegrations: int = 0
    last_stats: ExchangeStats = field(default_factory=ExchangeStats)

    def __post_init__(self) -> None:
        if self.lookback is not None and self.lookback < 1:
            raise ConfigurationError(f"Look-back distance must be >= 1 or infinite, got {self.lookback}")
        if self.capacity is None:
            self.capacity = self.lookback
        self.fields = deque(self.fields, maxlen=self.capacity)
        self.layout = self.layout or partition_mesh(self.space.hierarchy, 1)

    @property
    def infinite(self) -> bool:
        return self.lookback is None

    def record(self, c: ScalarField) -> None:
        """Store the field the next advection starts from."""
        self.steps += 1
        if self.infinite:
            if self.initial is None:
                self.initial = c.copy()
            return
        self.fields.append(c)


def mmoc_advect(buffer: LookBackBuffer, history: VelocityHistory, rk: RKScheme, tau: float) -> ScalarField:
    """Advected field at the end of the latest velocity interval.

    Finite b re-seeds particles at the DoFs and integrates them through the
    last min(b, steps) intervals, newest first, each with its own step length,
    before evaluating the field recorded at the start of the oldest one.
    Infinite b always evaluates the initial field: through persistent
    particles while the velocity history is autonomous, otherwise by
    re-integrating through every stored interval.

    Raises:
        ConfigurationError: If the buffer or history is shallower than needed.
    """
    if not len(history) or buffer.steps == 0:
        raise ConfigurationError("Advection needs a recorded field and at least one velocity interval")
    t_new = history.latest.t_new

    if buffer.infinite:
        if history.autonomous:
            if buffer.swarm is None:
                buffer.swarm = create_particles(buffer.space, buffer.layout, rk.stages)
            buffer.swarm.stats = ExchangeStats()
            backtrack(buffer.swarm, history.latest, rk, tau)
            buffer.last_stats = buffer.swarm.stats
            return evaluate_departure(buffer.swarm, buffer.initial, t_new)
        if buffer.swarm is not None:
            logger.info("Velocity history is time dependent — switching to re-integration")
            buffer.swarm = None
        if buffer.reintegrations % REINTEGRATION_WARN_EVERY == 0:
            logger.warning(
                "Infinite look-back with a time-dependent velocity re-integrates through all %d stored "
                "intervals at step %d; work per step grows with the step count",
                len(history), buffer.steps,
            )
        buffer.reintegrations += 1
        if len(history) < buffer.steps:
            raise ConfigurationError(
                f"Velocity history holds {len(history)} intervals, re-integration needs {buffer.steps}"
            )
        swarm = create_particles(buffer.space, buffer.layout, rk.stages)
        for k, vp in enumerate(reversed(history.last(buffer.steps))):
            backtrack(swarm, vp, rk, tau if k == 0 else vp.tau)
        buffer.last_stats = swarm.stats
        return evaluate_departure(swarm, buffer.initial, t_new)

    depth = min(buffer.lookback, buffer.steps)
    if len(buffer.fields) < depth or len(history) < depth:
        raise ConfigurationError(
            f"Look-back b={buffer.lookback} needs {depth} stored fields and intervals, "
            f"buffer holds {len(buffer.fields)} and history {len(history)}"
        )
    source = buffer.fields[-depth]
    swarm = create_particles(buffer.space, buffer.layout, rk.stages)
    for k, vp in enumerate(reversed(history.last(depth))):
        backtrack(swarm, vp, rk, tau if k == 0 else vp.tau)
    buffer.last_stats = swarm.stats
    return evaluate_departure(swarm, source, t_new)
