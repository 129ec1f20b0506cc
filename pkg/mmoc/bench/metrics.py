"""Error, oscillation and energy metrics plus the convection diagnostics."""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
import scipy.sparse as sp

from mmoc.services.fem import (
    ScalarField,
    SparseOperator,
    VectorField,
    boundary_facet_quadrature,
    element_quadrature,
    evaluate_located,
    gradient_located,
)

logger = logging.getLogger(__name__)

CSV_COLUMNS: tuple[str, ...] = (
    "step", "t", "tau", "h0_error", "var", "e_peak", "delta_m", "u_rms", "nu", "particles_migrated", "clamps",
)


@dataclass
class MetricRow:
    """One row of the per-step report; ``None`` marks a metric that is not defined."""

    t: float
    var: float
    delta_m: float
    h0_error: float | None = None
    e_peak: float | None = None
    u_rms: float | None = None
    nu: float | None = None
    step: int = 0
    tau: float = 0.0
    particles_migrated: int = 0
    clamps: int = 0

    def as_record(self) -> dict[str, float | int | None]:
        data = asdict(self)
        return {column: data[column] for column in CSV_COLUMNS}


def _matrix(M: SparseOperator | sp.spmatrix) -> sp.spmatrix:
    return M.matrix if isinstance(M, SparseOperator) else M


def mass_functional(c: ScalarField, M: SparseOperator | sp.spmatrix) -> float:
    """m(c) = 1^T M c."""
    return float(np.sum(_matrix(M) @ c.coefficients))


def compute_metrics(
    c: ScalarField,
    c_exact: ScalarField | None,
    M: SparseOperator | sp.spmatrix,
    m0: float,
) -> MetricRow:
    """Metrics of the computed field ``c`` against the interpolated exact field.

    ``h0_error = sqrt(e^T M e)`` with ``e = c_exact - c``; ``var`` is the
    coefficient range; ``e_peak`` compares coefficient maxima; ``delta_m`` is
    the relative change of the mass functional against ``m0``.
    """
    coeff = c.coefficients
    var = float(coeff.max() - coeff.min()) if coeff.size else 0.0
    delta_m = mass_functional(c, M) / m0 - 1.0 if m0 != 0.0 else math.nan
    row = MetricRow(t=c.time, var=var, delta_m=delta_m)
    if c_exact is not None:
        e = c_exact.coefficients - coeff
        row.h0_error = float(np.sqrt(max(float(e @ (_matrix(M) @ e)), 0.0)))
        peak = float(c_exact.coefficients.max())
        row.e_peak = float(coeff.max()) / peak - 1.0 if peak != 0.0 else None
    return row


@dataclass(frozen=True)
class FlowDiagnostics:
    u_rms: float
    nu: float
    valid: bool = True


def root_mean_square_velocity(u: VectorField) -> float:
    """(|Omega|^-1 int |u|^2 dx)^(1/2) by element quadrature."""
    space = u.space
    volume = 0.0
    energy = 0.0
    for q in element_quadrature(space):
        coeff = u.coefficients[space.element_dofs[q.elements]]
        uq = np.einsum("eak,qa->eqk", coeff, q.values)
        energy += float(np.einsum("eq,eqk,eqk->", q.weights, uq, uq))
        volume += float(q.weights.sum())
    return math.sqrt(energy / volume)


def nusselt_number(c: ScalarField, top: str = "top", bottom: str = "bottom") -> float:
    """-(int_top d c / d x_d) / (int_bottom c), with element derivative traces on the top facets.

    Returns:
        NaN when the bottom integral vanishes.
    """
    d = c.space.dim
    fq_top = boundary_facet_quadrature(c.space, (top,))
    nq = fq_top.lam.shape[1]
    elements = np.repeat(fq_top.elements, nq)
    grad = gradient_located(c, elements, fq_top.lam.reshape(-1, d + 1))
    numerator = float(np.sum(fq_top.weights.ravel() * grad[:, d - 1]))

    fq_bottom = boundary_facet_quadrature(c.space, (bottom,))
    nq = fq_bottom.lam.shape[1]
    values = evaluate_located(c, np.repeat(fq_bottom.elements, nq), fq_bottom.lam.reshape(-1, d + 1))
    denominator = float(np.sum(fq_bottom.weights.ravel() * values))
    if denominator == 0.0:
        return math.nan
    return -numerator / denominator


def compute_flow_diagnostics(u: VectorField, c: ScalarField, top: str = "top",
                             bottom: str = "bottom") -> FlowDiagnostics:
    """u_rms of the velocity and Nu of the temperature; ``valid`` is false when Nu is undefined."""
    nu = nusselt_number(c, top, bottom)
    return FlowDiagnostics(root_mean_square_velocity(u), nu, math.isfinite(nu))


# ---------------------------------------------------------------------------
# Periodic regimes
# ---------------------------------------------------------------------------


@dataclass
class CycleReport:
    """Local extrema of a time series and the period of their repetition.

    Attributes:
        period: n of the detected Pn-cycle (0 when no periodicity was found).
        maxima: ``(t, value)`` of local maxima in the window.
        minima: ``(t, value)`` of local minima in the window.
        stages: ``(stage name, t_max, t_min)`` of each maximum and the minimum following it.
    """

    period: int
    maxima: list[tuple[float, float]] = field(default_factory=list)
    minima: list[tuple[float, float]] = field(default_factory=list)
    stages: list[tuple[str, float, float]] = field(default_factory=list)

    def stage_extrema(self) -> list[tuple[float, float]]:
        """``(max, min)`` of the latest occurrence of each stage, largest maximum first.

        Ordering by the maximum makes the pairs comparable between runs whose
        windows start in different stages.
        """
        maxima, minima = dict(self.maxima), dict(self.minima)
        latest = {name: (maxima[t_max], minima[t_min]) for name, t_max, t_min in self.stages}
        return sorted(latest.values(), reverse=True)

    def to_dict(self) -> dict[str, Any]:
        return {
            "period": self.period,
            "stage_extrema": [list(pair) for pair in self.stage_extrema()],
            "maxima": [list(pair) for pair in self.maxima],
            "minima": [list(pair) for pair in self.minima],
            "stages": [list(stage) for stage in self.stages],
        }


def local_extrema(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Indices of strict interior local maxima and minima (plateaus count once)."""
    values = np.asarray(values, dtype=float)
    if values.size < 3:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    keep = np.r_[True, np.diff(values) != 0.0]
    index = np.flatnonzero(keep)
    v = values[index]
    slope = np.sign(np.diff(v))
    turn = np.diff(slope)
    maxima = index[1:-1][turn < 0]
    minima = index[1:-1][turn > 0]
    return maxima, minima


def detect_cycle(
    times: np.ndarray,
    values: np.ndarray,
    window: tuple[float, float] | None = None,
    rel_tol: float = 0.02,
    max_period: int = 8,
) -> CycleReport:
    """Find the smallest n such that every n-th local maximum repeats within ``rel_tol``.

    Each stage S0..S(n-1) is a local maximum followed by the next local minimum.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if window is not None:
        inside = (times >= window[0]) & (times <= window[1])
        times, values = times[inside], values[inside]
    imax, imin = local_extrema(values)
    peaks = values[imax]
    period = 0
    scale = float(np.abs(peaks).max()) if peaks.size else 0.0
    for n in range(1, min(max_period, peaks.size // 2) + 1):
        if np.all(np.abs(peaks[n:] - peaks[:-n]) <= rel_tol * scale):
            period = n
            break

    report = CycleReport(
        period=period,
        maxima=[(float(times[i]), float(values[i])) for i in imax],
        minima=[(float(times[i]), float(values[i])) for i in imin],
    )
    if period:
        for k, i in enumerate(imax):
            following = imin[imin > i]
            if following.size:
                report.stages.append((f"S{k % period}", float(times[i]), float(times[following[0]])))
    logger.info("Cycle detection — period=%d maxima=%d minima=%d", period, imax.size, imin.size)
    return report
