"""Benchmark problems: meshes, initial conditions, velocities and exact solutions."""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from mmoc.bench.spec import BenchmarkSpec
from mmoc.services.blending import AnnulusBlending
from mmoc.services.fem import FunctionSpace, VectorField, build_space, interpolate_vector
from mmoc.services.mesh import BoundaryTag, MeshHierarchy, annulus, box, rectangle, refine, unit_cube
from mmoc.services.stokes import BoussinesqForce, VelocityBC

logger = logging.getLogger(__name__)

ScalarFunction = Callable[[np.ndarray], np.ndarray]
TimeFunction = Callable[[np.ndarray, float], np.ndarray]

ROTATION_RADIUS = 0.15
ROTATION_CENTER = np.array([0.5, 0.5])
SLOTTED_CENTER = np.array([0.5, 0.75])
CONE_CENTER = np.array([0.5, 0.25])
HILL_CENTER = np.array([0.25, 0.5])
SWIRL_PERIOD = 1.5
ANNULUS_RADII = (0.5, 1.5)
BLANKENBACH_SIZE = (1.5, 1.0)
BLANKENBACH_T_END = 3.0


# ---------------------------------------------------------------------------
# Circular advection
# ---------------------------------------------------------------------------


def _scaled_radius(x: np.ndarray, center: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.atleast_2d(x) - center, axis=1) / ROTATION_RADIUS


def slotted_cylinder(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    inside = _scaled_radius(x, SLOTTED_CENTER) <= 1.0
    outside_slot = (np.abs(x[:, 0] - SLOTTED_CENTER[0]) >= 0.025) | (x[:, 1] >= 0.85)
    return np.where(inside & outside_slot, 1.0, 0.0)


def cone(x: np.ndarray) -> np.ndarray:
    r = _scaled_radius(x, CONE_CENTER)
    return np.where(r <= 1.0, 1.0 - r, 0.0)


def hill(x: np.ndarray) -> np.ndarray:
    r = _scaled_radius(x, HILL_CENTER)
    return np.where(r <= 1.0, 0.25 * (1.0 + np.cos(np.pi * np.minimum(r, 1.0))), 0.0)


ROTATION_BODIES: dict[str, tuple[ScalarFunction, ...]] = {
    "all": (slotted_cylinder, cone, hill),
    "slotted": (slotted_cylinder,),
    "cone": (cone,),
    "hill": (hill,),
}


def rotation_initial(kind: str = "all") -> ScalarFunction:
    """Sum of the selected rotating bodies."""
    bodies = ROTATION_BODIES[kind]
    return lambda x: sum(body(x) for body in bodies)


def rotation_velocity(x: np.ndarray) -> np.ndarray:
    """Counter-clockwise rotation about (0.5, 0.5) with period 2 pi."""
    x = np.atleast_2d(x)
    return np.column_stack([0.5 - x[:, 1], x[:, 0] - 0.5])


def rotation_exact(kind: str = "all") -> TimeFunction:
    """c0 transported by the rotation: c0(center + R(-t)(x - center))."""
    c0 = rotation_initial(kind)

    def exact(x: np.ndarray, t: float) -> np.ndarray:
        rel = np.atleast_2d(x) - ROTATION_CENTER
        cos_t, sin_t = math.cos(t), math.sin(t)
        back = np.column_stack([cos_t * rel[:, 0] + sin_t * rel[:, 1], -sin_t * rel[:, 0] + cos_t * rel[:, 1]])
        return c0(ROTATION_CENTER + back)

    return exact


def rotation_tau(tau: float, period: float = 2.0 * math.pi) -> float:
    """Step length closest to ``tau`` that divides one revolution evenly."""
    return period / max(1, round(period / tau))


# ---------------------------------------------------------------------------
# Swirling flow
# ---------------------------------------------------------------------------


def swirl_initial(x: np.ndarray) -> np.ndarray:
    return np.where(np.atleast_2d(x)[:, 0] < 0.5, 1.0, 0.0)


def swirl_velocity(x: np.ndarray, t: float, period: float = SWIRL_PERIOD) -> np.ndarray:
    """Deformation field that reverses at t = period / 2."""
    x = np.atleast_2d(x)
    g = math.cos(math.pi * t / period)
    s1, s2, s3 = (np.sin(np.pi * x[:, k]) for k in range(3))
    d1, d2, d3 = (np.sin(2.0 * np.pi * x[:, k]) for k in range(3))
    return g * np.column_stack([2.0 * s1**2 * d2 * d3, -d1 * s2**2 * d3, -d1 * d2 * s3**2])


# ---------------------------------------------------------------------------
# Gaussian hill on the annulus
# ---------------------------------------------------------------------------


def annulus_start_time(kappa: float) -> float:
    """t0(kappa) = 2 pi 1e-3 / kappa, which gives every kappa the same initial shape."""
    return 2.0 * math.pi * 1e-3 / kappa


def annulus_velocity(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    return np.column_stack([-x[:, 1], x[:, 0]])


def annulus_solution(kappa: float) -> TimeFunction:
    """Heat kernel whose centre rotates from (0, 1) with unit angular speed."""

    def exact(x: np.ndarray, t: float) -> np.ndarray:
        x = np.atleast_2d(x)
        centre = np.array([-math.sin(t), math.cos(t)])
        r2 = np.sum((x - centre) ** 2, axis=1)
        return np.exp(-r2 / (4.0 * t * kappa)) / (4.0 * math.pi * t * kappa)

    return exact


# ---------------------------------------------------------------------------
# Convection in a box
# ---------------------------------------------------------------------------


def blankenbach_initial(x: np.ndarray, length: float = BLANKENBACH_SIZE[0],
                        height: float = BLANKENBACH_SIZE[1]) -> np.ndarray:
    x = np.atleast_2d(x)
    return 0.5 * (1.0 - x[:, 1] ** 2) + 0.01 * np.cos(np.pi * x[:, 0] / length) * np.sin(np.pi * x[:, 1] / height)


# ---------------------------------------------------------------------------
# Pipe throughput demo
# ---------------------------------------------------------------------------

PIPE_VELOCITY = np.array([1.0, 0.0, 0.0])
PIPE_BLOB_CENTER = np.array([0.5, 0.5, 0.5])
PIPE_BLOB_WIDTH = 0.1


def pipe_exact(x: np.ndarray, t: float) -> np.ndarray:
    shifted = np.atleast_2d(x) - PIPE_VELOCITY * t - PIPE_BLOB_CENTER
    return np.exp(-np.sum(shifted**2, axis=1) / (2.0 * PIPE_BLOB_WIDTH**2))


# ---------------------------------------------------------------------------
# Problem assembly
# ---------------------------------------------------------------------------


@dataclass
class Problem:
    """A benchmark instantiated on its mesh.

    Attributes:
        name: Benchmark name.
        hierarchy: Refined (and blended) mesh.
        space: Temperature space with its Dirichlet DoFs.
        initial: c0 as a function of the physical point.
        exact: Exact c(x, t) where known.
        exact_final_only: ``exact`` is only valid at ``t_end`` (flow reversal).
        velocity: Prescribed u(x, t); ``None`` for Stokes-coupled problems.
        steady: Prescribed velocity does not depend on time.
        kappa: Diffusivity.
        theta: Implicitness of the diffusion step.
        source: Heat production q(x, t).
        boundary: Dirichlet values g(x, t).
        dirichlet: Temperature Dirichlet labels.
        velocity_bc: Stokes boundary conditions.
        force: Boussinesq forcing.
        t_start: Initial time.
        t_end: Final time.
        tau: Step length (already adjusted to divide the run evenly when needed).
        flow_labels: (top, bottom) labels for the Nusselt number.
    """

    name: str
    hierarchy: MeshHierarchy
    space: FunctionSpace
    initial: ScalarFunction
    exact: TimeFunction | None = None
    exact_final_only: bool = False
    velocity: TimeFunction | None = None
    steady: bool = True
    kappa: float = 0.0
    theta: float = 0.5
    source: TimeFunction | None = None
    boundary: TimeFunction | None = None
    dirichlet: tuple[str, ...] = ()
    velocity_bc: VelocityBC | None = None
    force: BoussinesqForce | None = None
    t_start: float = 0.0
    t_end: float = 1.0
    tau: float | None = None
    flow_labels: tuple[str, str] | None = None
    _velocity_space: FunctionSpace | None = field(default=None, repr=False)

    @property
    def coupled(self) -> bool:
        return self.velocity_bc is not None

    def exact_at(self, t: float) -> ScalarFunction | None:
        """Exact solution at time ``t`` if it is known there."""
        if self.exact is None:
            return None
        if self.exact_final_only and not (math.isclose(t, self.t_end, rel_tol=1e-12) or t == self.t_start):
            return None
        exact = self.exact
        return lambda x: exact(x, t)

    def velocity_space(self) -> FunctionSpace:
        """Space holding prescribed velocities (the temperature space without constraints)."""
        if self._velocity_space is None:
            self._velocity_space = build_space(self.hierarchy, self.space.degree)
        return self._velocity_space

    def velocity_provider(self) -> Callable[[float], VectorField] | None:
        """u(t) interpolated on :meth:`velocity_space`.

        A steady velocity is interpolated once and the same field object is
        returned for every time.
        """
        if self.velocity is None:
            return None
        space = self.velocity_space()
        fn = self.velocity
        if self.steady:
            frozen = interpolate_vector(lambda x: fn(x, 0.0), space, self.t_start)
            return lambda t: frozen
        cache: dict[float, VectorField] = {}

        def provider(t: float) -> VectorField:
            if t not in cache:
                if len(cache) >= 2:
                    cache.pop(next(iter(cache)))
                cache[t] = interpolate_vector(lambda x: fn(x, t), space, t)
            return cache[t]

        return provider


def _step(spec: BenchmarkSpec, default: float) -> float:
    return spec.tau if spec.tau is not None else default


def build_problem(spec: BenchmarkSpec) -> Problem:
    """Instantiate the benchmark named by ``spec``.

    Raises:
        ConfigurationError: Propagated from spec validation.
    """
    spec.validate()
    builder = _BUILDERS[spec.name]
    problem = builder(spec)
    logger.info(
        "Built problem — name=%s level=%d degree=%d dofs=%d t=[%.4g, %.4g]",
        problem.name, spec.level, spec.degree, problem.space.n_dofs, problem.t_start, problem.t_end,
    )
    return problem


def _rotation2d(spec: BenchmarkSpec) -> Problem:
    hierarchy = refine(rectangle(1.0, 1.0, *spec.blocks()), spec.level)
    t_end = spec.t_end or 2.0 * math.pi
    return Problem(
        name=spec.name,
        hierarchy=hierarchy,
        space=build_space(hierarchy, spec.degree),
        initial=rotation_initial(spec.initial),
        exact=rotation_exact(spec.initial),
        velocity=lambda x, t: rotation_velocity(x),
        kappa=spec.kappa,
        theta=0.5 if spec.theta is None else spec.theta,
        t_end=t_end,
        tau=rotation_tau(spec.tau, t_end) if spec.tau is not None else None,
    )


def _swirl3d(spec: BenchmarkSpec) -> Problem:
    hierarchy = refine(unit_cube(), spec.level)
    t_end = spec.t_end or SWIRL_PERIOD
    return Problem(
        name=spec.name,
        hierarchy=hierarchy,
        space=build_space(hierarchy, spec.degree),
        initial=swirl_initial,
        exact=lambda x, t: swirl_initial(x),
        exact_final_only=True,
        velocity=lambda x, t: swirl_velocity(x, t, t_end),
        steady=False,
        kappa=spec.kappa,
        theta=0.5 if spec.theta is None else spec.theta,
        t_end=t_end,
        tau=rotation_tau(spec.tau, t_end) if spec.tau is not None else None,
    )


def _annulus_ad(spec: BenchmarkSpec) -> Problem:
    r_min, r_max = ANNULUS_RADII
    n_t, n_r = spec.blocks()
    hierarchy = refine(annulus(r_min, r_max, n_t, n_r), spec.level, AnnulusBlending(r_min, r_max, n_t))
    exact = annulus_solution(spec.kappa)
    t0 = annulus_start_time(spec.kappa)
    t_end = t0 + (spec.t_end or 2.0 * math.pi)
    dirichlet = ("inner", "outer")
    return Problem(
        name=spec.name,
        hierarchy=hierarchy,
        space=build_space(hierarchy, spec.degree, dirichlet),
        initial=lambda x: exact(x, t0),
        exact=exact,
        velocity=lambda x, t: annulus_velocity(x),
        kappa=spec.kappa,
        theta=1.0 if spec.theta is None else spec.theta,
        boundary=exact,
        dirichlet=dirichlet,
        t_start=t0,
        t_end=t_end,
        tau=rotation_tau(spec.tau, t_end - t0) if spec.tau is not None else None,
    )


def _blankenbach(spec: BenchmarkSpec) -> Problem:
    length, height = BLANKENBACH_SIZE
    nx, ny = spec.blocks()
    hierarchy = refine(rectangle(length, height, nx, ny), spec.level)
    return Problem(
        name=spec.name,
        hierarchy=hierarchy,
        space=build_space(hierarchy, spec.degree, ("top",)),
        initial=lambda x: blankenbach_initial(x, length, height),
        kappa=spec.kappa,
        theta=0.5 if spec.theta is None else spec.theta,
        source=lambda x, t: np.ones(len(x)),
        boundary=lambda x, t: np.zeros(len(x)),
        dirichlet=("top",),
        velocity_bc=VelocityBC({
            "left": BoundaryTag.FREE_SLIP,
            "right": BoundaryTag.FREE_SLIP,
            "bottom": BoundaryTag.NO_SLIP,
            "top": BoundaryTag.NO_SLIP,
        }),
        force=BoussinesqForce.constant(spec.rayleigh, (0.0, 1.0)),
        t_end=spec.t_end or BLANKENBACH_T_END,
        tau=spec.tau,
        flow_labels=("top", "bottom"),
    )


def _demo_pipe(spec: BenchmarkSpec) -> Problem:
    n, _ = spec.blocks()
    hierarchy = refine(box((float(n), 1.0, 1.0), (n, 1, 1)), spec.level)
    return Problem(
        name=spec.name,
        hierarchy=hierarchy,
        space=build_space(hierarchy, spec.degree),
        initial=lambda x: pipe_exact(x, 0.0),
        exact=pipe_exact,
        velocity=lambda x, t: np.broadcast_to(PIPE_VELOCITY, np.atleast_2d(x).shape),
        kappa=spec.kappa,
        theta=0.5 if spec.theta is None else spec.theta,
        t_end=spec.t_end or 1.0,
        tau=_step(spec, 0.1),
    )


_BUILDERS: dict[str, Callable[[BenchmarkSpec], Problem]] = {
    "rotation2d": _rotation2d,
    "swirl3d": _swirl3d,
    "annulus_ad": _annulus_ad,
    "blankenbach": _blankenbach,
    "demo_pipe": _demo_pipe,
}
