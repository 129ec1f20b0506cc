"""Runtime settings read from the environment (``.env`` is loaded by ``mmoc.main``)."""

import logging
import os
from dataclasses import dataclass
from functools import lru_cache

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Settings:
    """Process-wide defaults for solvers, output and logging.

    Attributes:
        log_level: Root logging level name.
        out_dir: Directory receiving CSV, VTK and summary files.
        cg_tol: Relative residual tolerance of the diffusion CG.
        cg_maxit_factor: Diffusion CG iteration cap is this factor times sqrt(n).
        stokes_tol: Relative residual tolerance of the pressure Schur CG.
        stokes_maxit: Iteration cap of the pressure Schur CG.
        clamp_tol: Distance beyond the domain, relative to its extent, that a plain lookup
            still accepts.
        clamp_max_distance: Largest distance beyond the domain, relative to its extent,
            that a clamping lookup projects back; particles further out are rejected.
    """

    log_level: str = "INFO"
    out_dir: str = "results"
    cg_tol: float = 1e-10
    cg_maxit_factor: float = 10.0
    stokes_tol: float = 1e-12
    stokes_maxit: int = 500
    clamp_tol: float = 1e-10
    clamp_max_distance: float = 0.5


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        return float(raw)
    except ValueError:
        logger.warning("Ignoring non-numeric %s=%r, using %s", name, raw, default)
        return default


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Build the settings from ``MMOC_*`` environment variables once per process."""
    return Settings(
        log_level=os.getenv("MMOC_LOG_LEVEL", "INFO").upper(),
        out_dir=os.getenv("MMOC_OUT_DIR", "results"),
        cg_tol=_env_float("MMOC_CG_TOL", 1e-10),
        cg_maxit_factor=_env_float("MMOC_CG_MAXIT_FACTOR", 10.0),
        stokes_tol=_env_float("MMOC_STOKES_TOL", 1e-12),
        stokes_maxit=int(_env_float("MMOC_STOKES_MAXIT", 500)),
        clamp_tol=_env_float("MMOC_CLAMP_TOL", 1e-10),
        clamp_max_distance=_env_float("MMOC_CLAMP_MAX_DISTANCE", 0.5),
    )
