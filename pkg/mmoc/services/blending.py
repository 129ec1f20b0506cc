"""Blending maps between the polyhedral computational domain and the physical domain."""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Literal

import numpy as np

from mmoc.config import get_settings
from mmoc.errors import OutOfDomainError

logger = logging.getLogger(__name__)

DEFAULT_CLAMP_TOL = 1e-10


class BlendingMap(ABC):
    """Homeomorphism Phi from the computational domain onto the physical domain.

    All methods are vectorized over the leading axis of ``(n, d)`` arrays.
    """

    kind: str = "abstract"

    @abstractmethod
    def forward(self, x: np.ndarray) -> np.ndarray:
        """Map computational points to physical points."""

    @abstractmethod
    def inverse(self, y: np.ndarray) -> np.ndarray:
        """Map physical points back to computational points."""

    @abstractmethod
    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Return D Phi at computational points, shape ``(n, d, d)``."""

    def clamp_physical(self, y: np.ndarray, tol: float = DEFAULT_CLAMP_TOL) -> np.ndarray:
        """Pull physical points within ``tol`` of the domain back onto it.

        Raises:
            OutOfDomainError: If a point is further than ``tol`` outside.
        """
        return y

    def clamp_computational(self, x: np.ndarray, tol: float = DEFAULT_CLAMP_TOL) -> np.ndarray:
        return x


@dataclass(frozen=True)
class IdentityBlending(BlendingMap):
    """Phi = id; the computational domain is the physical domain."""

    dim: int = 2
    kind: str = "identity"

    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float)

    def inverse(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=float)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.broadcast_to(np.eye(x.shape[1]), (x.shape[0], x.shape[1], x.shape[1])).copy()


@dataclass(frozen=True)
class AnnulusBlending(BlendingMap):
    """Radial map of a regular n-gon ring onto the annulus r_min <= |y| <= r_max.

    A computational point at angle theta inside sector j is scaled by
    1/f(theta), f(theta) = cos(pi/n_t) / cos(theta - theta_mid_j), which sends
    every polygonal ring (chords between the vertices at angles 2 pi j/n_t)
    onto the circle through its vertices.  The physical radius is therefore
    linear in the polygonal radius fraction between the inner and outer ring.
    """

    r_min: float
    r_max: float
    n_tangential: int
    kind: str = "annulus"

    def __post_init__(self) -> None:
        if not 0.0 < self.r_min < self.r_max:
            raise ValueError(f"Annulus needs 0 < r_min < r_max, got {self.r_min}, {self.r_max}")
        if self.n_tangential < 3:
            raise ValueError(f"Annulus needs at least 3 sectors, got {self.n_tangential}")

    @property
    def sector_angle(self) -> float:
        return 2.0 * np.pi / self.n_tangential

    def _angle_offset(self, x: np.ndarray) -> np.ndarray:
        """theta - theta_mid of the sector containing each point."""
        alpha = self.sector_angle
        theta = np.mod(np.arctan2(x[:, 1], x[:, 0]), 2.0 * np.pi)
        sector = np.minimum(np.floor(theta / alpha), self.n_tangential - 1)
        return theta - (sector + 0.5) * alpha

    def _scale(self, x: np.ndarray) -> np.ndarray:
        """f(theta) <= 1: ratio of polygonal to circular radius along the ray."""
        return np.cos(0.5 * self.sector_angle) / np.cos(self._angle_offset(x))

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x / self._scale(x)[:, None]

    def inverse(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return y * self._scale(y)[:, None]

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        offset = self._angle_offset(x)
        c = np.cos(0.5 * self.sector_angle)
        g = np.cos(offset) / c
        dg = -np.sin(offset) / c
        r2 = np.einsum("ni,ni->n", x, x)
        grad_theta = np.column_stack([-x[:, 1], x[:, 0]]) / r2[:, None]
        jac = g[:, None, None] * np.eye(2)[None, :, :]
        jac += dg[:, None, None] * x[:, :, None] * grad_theta[:, None, :]
        return jac

    def clamp_physical(self, y: np.ndarray, tol: float = DEFAULT_CLAMP_TOL) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        radius = np.linalg.norm(y, axis=1)
        slack = tol * self.r_max
        bad = (radius < self.r_min - slack) | (radius > self.r_max + slack)
        if np.any(bad):
            first = y[np.argmax(bad)]
            raise OutOfDomainError(
                f"Point {first.tolist()} outside annulus [{self.r_min}, {self.r_max}]", first
            )
        clipped = np.clip(radius, self.r_min, self.r_max)
        moved = clipped != radius
        if np.any(moved):
            y = y.copy()
            y[moved] *= (clipped[moved] / radius[moved])[:, None]
        return y

    def clamp_computational(self, x: np.ndarray, tol: float = DEFAULT_CLAMP_TOL) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.inverse(self.clamp_physical(self.forward(x), tol))


def blend(
    mapping: BlendingMap,
    x: np.ndarray,
    direction: Literal["forward", "inverse"] = "forward",
    tol: float | None = None,
) -> np.ndarray:
    """Apply Phi or its inverse, clamping points within ``tol`` of the domain.

    Args:
        mapping: The blending map.
        x: One point ``(d,)`` or a batch ``(n, d)``.
        direction: ``"forward"`` (computational to physical) or ``"inverse"``.
        tol: Admissible distance beyond the domain, relative to its size;
            ``MMOC_CLAMP_TOL`` when omitted.

    Returns:
        Mapped point(s) with the same shape as ``x``.

    Raises:
        OutOfDomainError: If a point lies outside beyond ``tol``.
        ValueError: If ``direction`` is unknown.
    """
    arr = np.asarray(x, dtype=float)
    pts = np.atleast_2d(arr)
    tol = get_settings().clamp_tol if tol is None else tol
    if direction == "forward":
        out = mapping.forward(mapping.clamp_computational(pts, tol))
    elif direction == "inverse":
        out = mapping.inverse(mapping.clamp_physical(pts, tol))
    else:
        raise ValueError(f"Unknown blending direction: {direction!r}")
    return out.reshape(arr.shape)
