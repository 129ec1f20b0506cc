"""Exception hierarchy shared by the solver services and the benchmark runner."""

from typing import Any

import numpy as np


class MeshError(ValueError):
    """Invalid coarse mesh: degenerate element, non-conforming facet or bad file."""


class GeometryError(ValueError):
    """Non-positive Jacobian determinant of the blended element map."""

    def __init__(self, message: str, element: int | None = None) -> None:
        super().__init__(message)
        self.element = element


class OutOfDomainError(ValueError):
    """Point lies outside the domain beyond the clamp tolerance."""

    def __init__(self, message: str, point: Any = None) -> None:
        super().__init__(message)
        self.point = None if point is None else np.asarray(point, dtype=float)


class ConfigurationError(ValueError):
    """Inconsistent benchmark, look-back or partition parameters."""


class SolverError(RuntimeError):
    """Iterative solver did not reach its tolerance.

    Attributes:
        residuals: Residual norms recorded per iteration.
    """

    def __init__(self, message: str, residuals: list[float] | None = None) -> None:
        super().__init__(message)
        self.residuals = list(residuals or [])

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else float("nan")
