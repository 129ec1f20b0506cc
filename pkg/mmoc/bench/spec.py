"""Benchmark specification: parsing of spec files and validation of parameter combinations."""

import json
import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Literal

from mmoc.errors import ConfigurationError

logger = logging.getLogger(__name__)

BENCHMARKS: tuple[str, ...] = ("rotation2d", "swirl3d", "annulus_ad", "blankenbach", "demo_pipe")
INITIAL_CONDITIONS: tuple[str, ...] = ("all", "slotted", "cone", "hill")
SCHEMES: tuple[str, ...] = ("ad", "ads", "pc")
# Coarse cells (nx, ny) of each benchmark mesh when the spec leaves them open
DEFAULT_BLOCKS: dict[str, tuple[int, int]] = {
    "rotation2d": (1, 1),
    "swirl3d": (1, 1),
    "annulus_ad": (12, 4),
    "blankenbach": (3, 2),
    "demo_pipe": (4, 1),
}


@dataclass(frozen=True)
class BenchmarkSpec:
    """Parameters of one benchmark run.

    Attributes:
        name: Benchmark, one of :data:`BENCHMARKS`.
        level: Refinement level L of the coarse mesh.
        degree: Polynomial degree of the temperature space.
        scheme: ``ad``, ``ads`` or ``pc``.
        tau: Fixed step length (also the fallback of the CFL policy).
        cfl: CFL number; switches to CFL-driven steps when set.
        lookback: Look-back distance b; ``None`` means infinity.
        kappa: Diffusivity.
        theta: Implicitness of the diffusion step; benchmark default when omitted.
        rayleigh: Rayleigh number (coupled problems).
        t_end: Final time; benchmark default when omitted.
        ranks: Number of in-process partitions.
        rk: Name of the Runge-Kutta scheme.
        initial: Rotation initial condition selector.
        nx: Coarse cells in x (rectangle, box, annulus tangential count).
        ny: Coarse cells in y (rectangle, annulus radial count).
        out_dir: Output directory; settings default when omitted.
        vtk_every: Write VTK every this many steps (0 disables).
        seed: Reserved; recorded in the summary only.
    """

    name: str
    level: int = 3
    degree: int = 1
    scheme: Literal["ad", "ads", "pc"] = "ad"
    tau: float | None = None
    cfl: float | None = None
    lookback: int | None = 1
    kappa: float = 0.0
    theta: float | None = None
    rayleigh: float = 0.0
    t_end: float | None = None
    ranks: int = 1
    rk: str = "rk4"
    initial: str = "all"
    nx: int | None = None
    ny: int | None = None
    out_dir: str | None = None
    vtk_every: int = 0
    seed: int = 0

    def validate(self) -> "BenchmarkSpec":
        """Check the parameter combination against the benchmark's definition.

        Raises:
            ConfigurationError: On any inconsistent combination.
        """
        if self.name not in BENCHMARKS:
            raise ConfigurationError(f"Unknown benchmark {self.name!r}; known: {', '.join(BENCHMARKS)}")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"Unknown scheme {self.scheme!r}; known: {', '.join(SCHEMES)}")
        if self.level < 0:
            raise ConfigurationError(f"Refinement level must be non-negative, got {self.level}")
        if self.degree not in (1, 2):
            raise ConfigurationError(f"Degree must be 1 or 2, got {self.degree}")
        if self.tau is None and self.cfl is None:
            raise ConfigurationError("Either tau or cfl must be given")
        if self.tau is not None and self.tau <= 0.0:
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        if self.cfl is not None and self.cfl <= 0.0:
            raise ConfigurationError(f"cfl must be positive, got {self.cfl}")
        if self.lookback is not None and self.lookback < 1:
            raise ConfigurationError(f"Look-back distance must be >= 1 or inf, got {self.lookback}")
        if self.kappa < 0.0:
            raise ConfigurationError(f"kappa must be non-negative, got {self.kappa}")
        if self.theta is not None and not 0.0 <= self.theta <= 1.0:
            raise ConfigurationError(f"theta must lie in [0, 1], got {self.theta}")
        if self.kappa > 0.0 and self.lookback != 1:
            raise ConfigurationError("Diffusion interpolates every step, so kappa > 0 needs lookback = 1")
        if self.cfl is not None and self.lookback != 1:
            raise ConfigurationError("CFL-driven step lengths are only supported with lookback = 1")
        if self.ranks < 1:
            raise ConfigurationError(f"ranks must be at least 1, got {self.ranks}")
        if self.ranks > self.n_macros:
            raise ConfigurationError(
                f"ranks = {self.ranks} exceeds the {self.n_macros} macro volumes of {self.name}; "
                "use fewer ranks or more coarse cells (nx, ny)"
            )
        if self.initial not in INITIAL_CONDITIONS:
            raise ConfigurationError(f"Unknown initial condition {self.initial!r}")
        if self.vtk_every < 0:
            raise ConfigurationError("vtk_every must be non-negative")
        if self.t_end is not None and self.t_end <= 0.0:
            raise ConfigurationError(f"t_end must be positive, got {self.t_end}")

        if self.name == "blankenbach":
            if self.scheme != "pc":
                raise ConfigurationError("blankenbach couples Stokes flow and needs scheme = pc")
            if self.kappa <= 0.0:
                raise ConfigurationError("blankenbach needs kappa > 0")
        elif self.scheme == "pc":
            raise ConfigurationError(f"scheme = pc is only defined for blankenbach, not {self.name}")
        if self.name == "annulus_ad" and self.kappa <= 0.0:
            raise ConfigurationError("annulus_ad needs kappa > 0 (the exact solution is a heat kernel)")
        if self.name in ("rotation2d", "swirl3d", "demo_pipe") and self.scheme == "ads" and self.kappa == 0.0:
            logger.info("Strang splitting without diffusion reduces to pure advection")
        return self

    def blocks(self) -> tuple[int, int]:
        """Coarse cells (nx, ny), falling back to the benchmark's default mesh."""
        nx, ny = DEFAULT_BLOCKS[self.name]
        return self.nx or nx, self.ny or ny

    @property
    def n_macros(self) -> int:
        """Macro simplices of the coarse mesh: 2 per square, 6 Kuhn tetrahedra per cube."""
        nx, ny = self.blocks()
        if self.name == "swirl3d":
            return 6
        if self.name == "demo_pipe":
            return 6 * nx
        return 2 * nx * ny

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["lookback"] = "inf" if self.lookback is None else self.lookback
        return data


_INT_FIELDS = {"level", "degree", "ranks", "vtk_every", "seed", "nx", "ny"}
_FLOAT_FIELDS = {"tau", "cfl", "kappa", "theta", "rayleigh", "t_end"}


def _coerce(key: str, value: Any) -> Any:
    if value is None:
        return None
    if isinstance(value, str):
        value = value.strip().strip('"').strip("'")
        if value.lower() in ("", "none", "null"):
            return None
    try:
        if key == "lookback":
            if isinstance(value, str) and value.lower() in ("inf", "infinity", "∞"):
                return None
            if isinstance(value, float) and math.isinf(value):
                return None
            return int(value)
        if key in _INT_FIELDS:
            return int(value)
        if key in _FLOAT_FIELDS:
            return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"Invalid value {value!r} for {key!r}") from exc
    return value


def parse_spec_text(text: str) -> dict[str, Any]:
    """Parse a JSON object or ``key = value`` lines (``#`` starts a comment)."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            data = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"Spec is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError("JSON spec must be an object")
        return data
    data: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise ConfigurationError(f"Line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split(sep, 1))
        data[key] = value
    return data


def spec_from_mapping(data: dict[str, Any], **overrides: Any) -> BenchmarkSpec:
    """Build and validate a spec; ``overrides`` that are not ``None`` win over ``data``.

    Raises:
        ConfigurationError: On unknown keys or invalid values.
    """
    known = {f.name for f in fields(BenchmarkSpec)}
    merged = {**data, **{k: v for k, v in overrides.items() if v is not None}}
    unknown = sorted(set(merged) - known)
    if unknown:
        raise ConfigurationError(f"Unknown spec keys: {', '.join(unknown)}")
    if "name" not in merged:
        raise ConfigurationError("Spec needs a benchmark name")
    return BenchmarkSpec(**{k: _coerce(k, v) for k, v in merged.items()}).validate()


def load_spec(path: str | Path, **overrides: Any) -> BenchmarkSpec:
    """Read a spec file (JSON or key = value text)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"Cannot read spec file {path}: {exc}") from exc
    spec = spec_from_mapping(parse_spec_text(text), **overrides)
    logger.info("Loaded spec — path=%s name=%s", path, spec.name)
    return spec


def with_tau(spec: BenchmarkSpec, tau: float) -> BenchmarkSpec:
    return replace(spec, tau=tau, cfl=None).validate()
