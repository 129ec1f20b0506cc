"""Symmetric quadrature rules on the reference simplex and the unit interval."""

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuadratureRule:
    """Points in reference coordinates (xi, one column per dimension) and weights.

    Weights sum to the reference measure: 1/2 for the triangle, 1/6 for the
    tetrahedron and 1 for the interval.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def barycentric(self) -> np.ndarray:
        """Barycentric coordinates (lambda_0, xi_1, ..., xi_d) of the points."""
        return np.column_stack([1.0 - self.points.sum(axis=1), self.points])


def _triangle_orbit3(a: float) -> list[tuple[float, float]]:
    b = 1.0 - 2.0 * a
    return [(a, a), (b, a), (a, b)]


def _tet_orbit4(a: float) -> list[tuple[float, float, float]]:
    b = 1.0 - 3.0 * a
    return [(a, a, a), (b, a, a), (a, b, a), (a, a, b)]


def _tet_orbit6(a: float) -> list[tuple[float, float, float]]:
    b = 0.5 - a
    return [(a, a, b), (a, b, a), (b, a, a), (a, b, b), (b, a, b), (b, b, a)]


@lru_cache(maxsize=None)
def simplex_rule(dim: int, degree: int) -> QuadratureRule:
    """Return a symmetric rule on the reference simplex exact for the given degree.

    Args:
        dim: 2 (triangle) or 3 (tetrahedron).
        degree: Requested polynomial exactness; the lowest tabulated rule
            with at least this exactness is returned.

    Raises:
        ValueError: If no tabulated rule reaches the requested degree.
    """
    if dim == 2:
        if degree <= 2:
            pts = [(1 / 6, 1 / 6), (2 / 3, 1 / 6), (1 / 6, 2 / 3)]
            return QuadratureRule(np.array(pts), np.full(3, 1 / 6), 2)
        if degree <= 4:
            pts = _triangle_orbit3(0.445948490915965) + _triangle_orbit3(0.091576213509771)
            w = [0.223381589678011] * 3 + [0.109951743655322] * 3
            return QuadratureRule(np.array(pts), 0.5 * np.array(w), 4)
    elif dim == 3:
        if degree <= 2:
            a, b = 0.1381966011250105, 0.5854101966249685
            pts = [(a, a, a), (b, a, a), (a, b, a), (a, a, b)]
            return QuadratureRule(np.array(pts), np.full(4, 1 / 24), 2)
        if degree <= 5:
            pts = (
                _tet_orbit4(0.0927352503108912)
                + _tet_orbit4(0.3108859192633006)
                + _tet_orbit6(0.0455037041256496)
            )
            w = [0.01224884051939366] * 4 + [0.01878132095300264] * 4 + [0.007091003462846911] * 6
            return QuadratureRule(np.array(pts), np.array(w), 5)
    raise ValueError(f"No simplex quadrature tabulated for dim={dim}, degree={degree}")


@lru_cache(maxsize=None)
def line_rule(n_points: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n_points)
    return QuadratureRule((0.5 * (x + 1.0))[:, None], 0.5 * w, 2 * n_points - 1)


def rule_for_degree(dim: int, fe_degree: int) -> QuadratureRule:
    """Default rule for bilinear forms of a Lagrange space: order 2 for P1, order 4 for P2."""
    return simplex_rule(dim, 2 if fe_degree == 1 else 4)
