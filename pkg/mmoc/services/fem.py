"""Lagrange P1/P2 spaces on the refined hierarchy: assembly, interpolation, evaluation."""

import logging
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Literal

import numpy as np
import scipy.sparse as sp

from mmoc.config import get_settings
from mmoc.errors import GeometryError, OutOfDomainError
from mmoc.services.blending import blend
from mmoc.services.mesh import P2_EDGES, LatticeNumbering, Location, MeshHierarchy, number_lattice
from mmoc.services.quadrature import QuadratureRule, line_rule, rule_for_degree, simplex_rule

logger = logging.getLogger(__name__)

ASSEMBLY_CHUNK = 20000


# ---------------------------------------------------------------------------
# Basis functions
# ---------------------------------------------------------------------------


def local_size(dim: int, degree: int) -> int:
    return dim + 1 if degree == 1 else (dim + 1) + len(P2_EDGES[dim])


def basis_values(degree: int, lam: np.ndarray) -> np.ndarray:
    """Shape functions at barycentric points ``(n, d + 1)``, returns ``(n, nloc)``."""
    if degree == 1:
        return lam.copy()
    dim = lam.shape[1] - 1
    vertex = lam * (2.0 * lam - 1.0)
    edge = np.column_stack([4.0 * lam[:, a] * lam[:, b] for a, b in P2_EDGES[dim]])
    return np.concatenate([vertex, edge], axis=1)


def basis_lambda_derivatives(degree: int, lam: np.ndarray) -> np.ndarray:
    """d phi_a / d lambda_k, shape ``(n, nloc, d + 1)``."""
    n, d1 = lam.shape
    if degree == 1:
        return np.broadcast_to(np.eye(d1), (n, d1, d1)).copy()
    edges = P2_EDGES[d1 - 1]
    out = np.zeros((n, d1 + len(edges), d1))
    for k in range(d1):
        out[:, k, k] = 4.0 * lam[:, k] - 1.0
    for i, (a, b) in enumerate(edges):
        out[:, d1 + i, a] = 4.0 * lam[:, b]
        out[:, d1 + i, b] = 4.0 * lam[:, a]
    return out


def reference_gradients(degree: int, lam: np.ndarray) -> np.ndarray:
    """Gradients with respect to xi = (lambda_1, ..., lambda_d), shape ``(n, nloc, d)``."""
    dl = basis_lambda_derivatives(degree, lam)
    return dl[:, :, 1:] - dl[:, :, :1]


# ---------------------------------------------------------------------------
# Spaces and fields
# ---------------------------------------------------------------------------


@dataclass
class FunctionSpace:
    """Continuous Lagrange space of the given degree on the finest level.

    Attributes:
        hierarchy: Mesh hierarchy the space lives on.
        degree: 1 (vertices) or 2 (vertices and edge midpoints).
        numbering: Lattice numbering at resolution ``degree * 2**L``.
        element_dofs: ``(ne, nloc)`` DoFs of each micro element, VTK node order.
        dirichlet_mask: Per-DoF flag of Dirichlet-constrained DoFs.
    """

    hierarchy: MeshHierarchy
    degree: int
    numbering: LatticeNumbering
    element_dofs: np.ndarray
    dirichlet_mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.dirichlet_mask is None:
            self.dirichlet_mask = np.zeros(self.n_dofs, dtype=bool)

    @property
    def dim(self) -> int:
        return self.hierarchy.dim

    @property
    def n_dofs(self) -> int:
        return len(self.numbering)

    @property
    def n_local(self) -> int:
        return self.element_dofs.shape[1]

    @property
    def computational_coordinates(self) -> np.ndarray:
        return self.numbering.coordinates

    @cached_property
    def coordinates(self) -> np.ndarray:
        """Physical DoF coordinates Phi(x_i)."""
        return self.hierarchy.blending.forward(self.numbering.coordinates)

    @cached_property
    def dof_primitive(self) -> np.ndarray:
        """Owning macro primitive of every DoF (its support set)."""
        keys, inverse = np.unique(self.numbering.support, axis=0, return_inverse=True)
        ids = np.array([self.hierarchy.primitive_id(tuple(int(v) for v in k if v >= 0)) for k in keys],
                       dtype=np.int64)
        return ids[inverse.reshape(-1)]

    @cached_property
    def dof_local_index(self) -> np.ndarray:
        """Index of each DoF among the DoFs of its primitive."""
        prim = self.dof_primitive
        order = np.argsort(prim, kind="stable")
        sorted_prim = prim[order]
        starts = np.r_[0, np.flatnonzero(np.diff(sorted_prim)) + 1]
        group_start = np.repeat(starts, np.diff(np.r_[starts, len(prim)]))
        local = np.empty_like(prim)
        local[order] = np.arange(len(prim)) - group_start
        return local

    def dof_layout(self, index: int) -> tuple[int, int, np.ndarray]:
        """(primitive id, local index, physical coordinate) of one DoF."""
        return int(self.dof_primitive[index]), int(self.dof_local_index[index]), self.coordinates[index]

    def facet_dofs(self, facet: int) -> np.ndarray:
        """Mask of DoFs lying on coarse boundary facet ``facet``."""
        return self._facet_masks[facet]

    @cached_property
    def _facet_masks(self) -> list[np.ndarray]:
        support = self.numbering.support
        masks = []
        for facet in np.asarray(self.hierarchy.coarse.boundary_facets):
            masks.append(np.all(np.isin(support, facet) | (support < 0), axis=1))
        return masks

    def boundary_dofs(self, labels: set[str] | tuple[str, ...] | frozenset[str]) -> np.ndarray:
        """Mask of DoFs on boundary facets carrying any of ``labels``."""
        mask = np.zeros(self.n_dofs, dtype=bool)
        for facet in self.hierarchy.facets_with_label(labels):
            mask |= self._facet_masks[facet]
        return mask

    def with_dirichlet(self, labels: set[str] | tuple[str, ...] | frozenset[str]) -> "FunctionSpace":
        """Copy sharing all numbering data with Dirichlet DoFs on ``labels``."""
        clone = replace(self, dirichlet_mask=self.boundary_dofs(labels))
        for name in ("coordinates", "dof_primitive", "dof_local_index", "_facet_masks"):
            if name in self.__dict__:
                clone.__dict__[name] = self.__dict__[name]
        return clone


def build_space(hierarchy: MeshHierarchy, degree: int,
                dirichlet: set[str] | tuple[str, ...] = ()) -> FunctionSpace:
    """Number the DoFs of the P1 or P2 space on the finest level.

    Raises:
        ValueError: If ``degree`` is not 1 or 2.
    """
    if degree not in (1, 2):
        raise ValueError(f"Only P1 and P2 are supported, got degree={degree}")
    n_int = hierarchy.n_intervals
    numbering = (hierarchy.vertex_numbering if degree == 1
                 else number_lattice(hierarchy.coarse, degree * n_int))
    cell = hierarchy.cells.vertices.astype(np.int64) * degree
    if degree == 2:
        mids = [(cell[:, a] + cell[:, b]) // 2 for a, b in P2_EDGES[hierarchy.dim]]
        cell = np.concatenate([cell, np.stack(mids, axis=1)], axis=1)
    local = numbering.lattice.point_index(cell)
    element_dofs = numbering.point_ids[:, local].reshape(-1, local.shape[1])
    space = FunctionSpace(hierarchy, degree, numbering, element_dofs)
    if dirichlet:
        space.dirichlet_mask = space.boundary_dofs(dirichlet)
    logger.info("Built P%d space — dofs=%d elements=%d", degree, space.n_dofs, len(element_dofs))
    return space


@dataclass
class ScalarField:
    """Coefficient vector over a space at simulation time ``time``."""

    space: FunctionSpace
    coefficients: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.n_dofs,):
            raise ValueError(
                f"Coefficient vector of shape {self.coefficients.shape} does not match "
                f"{self.space.n_dofs} DoFs"
            )

    def copy(self, time: float | None = None) -> "ScalarField":
        return ScalarField(self.space, self.coefficients.copy(), self.time if time is None else time)


@dataclass
class VectorField:
    """d components sharing one space, stored as ``(n_dofs, d)``."""

    space: FunctionSpace
    coefficients: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.n_dofs, self.space.dim):
            raise ValueError(
                f"Vector coefficients of shape {self.coefficients.shape} do not match "
                f"({self.space.n_dofs}, {self.space.dim})"
            )

    @property
    def components(self) -> list[ScalarField]:
        return [ScalarField(self.space, self.coefficients[:, k].copy(), self.time)
                for k in range(self.space.dim)]

    def max_norm(self) -> float:
        """Largest Euclidean norm over the DoF values."""
        if not len(self.coefficients):
            return 0.0
        return float(np.sqrt(np.einsum("ik,ik->i", self.coefficients, self.coefficients)).max())


def interpolate(f: Callable[[np.ndarray], np.ndarray], space: FunctionSpace, time: float = 0.0) -> ScalarField:
    """Nodal interpolant: coefficient i is ``f`` at the physical DoF coordinate."""
    values = np.asarray(f(space.coordinates), dtype=float)
    return ScalarField(space, np.broadcast_to(values, (space.n_dofs,)).copy(), time)


def interpolate_vector(f: Callable[[np.ndarray], np.ndarray], space: FunctionSpace,
                       time: float = 0.0) -> VectorField:
    values = np.asarray(f(space.coordinates), dtype=float)
    return VectorField(space, np.broadcast_to(values, (space.n_dofs, space.dim)).copy(), time)


# ---------------------------------------------------------------------------
# Quadrature over the blended micro elements
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureChunk:
    """Quadrature data for a block of elements.

    Attributes:
        elements: Element indices of the block.
        points: ``(ne, nq, d)`` physical quadrature points.
        weights: ``(ne, nq)`` rule weight times |det J|.
        values: ``(nq, nloc)`` basis values.
        gradients: ``(ne, nq, nloc, d)`` physical basis gradients, or ``None``.
    """

    elements: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    gradients: np.ndarray | None


def element_quadrature(
    space: FunctionSpace,
    rule: QuadratureRule | None = None,
    gradients: bool = False,
    chunk: int = ASSEMBLY_CHUNK,
) -> Iterator[QuadratureChunk]:
    """Yield quadrature data over all elements in blocks of ``chunk``.

    The element map is Phi composed with the affine micro-element map; its
    Jacobian is D Phi at the quadrature point times the affine Jacobian.

    Raises:
        GeometryError: If D Phi has a non-positive determinant at a quadrature point.
    """
    hierarchy = space.hierarchy
    rule = rule or rule_for_degree(space.dim, space.degree)
    lam = rule.barycentric
    values = basis_values(space.degree, lam)
    ref_grads = reference_gradients(space.degree, lam)
    origin, jac = hierarchy.element_geometry
    blending = hierarchy.blending
    d, nq = space.dim, len(rule.weights)

    for start in range(0, len(origin), chunk):
        elems = np.arange(start, min(start + chunk, len(origin)))
        comp = origin[elems, None, :] + np.einsum("eij,qj->eqi", jac[elems], rule.points)
        flat = comp.reshape(-1, d)
        dphi = blending.jacobian(flat).reshape(len(elems), nq, d, d)
        det_phi = np.linalg.det(dphi)
        if np.any(det_phi <= 0.0):
            bad = int(elems[np.argmax(np.any(det_phi <= 0.0, axis=1))])
            raise GeometryError(f"Non-positive blending Jacobian in element {bad}", element=bad)
        full = np.einsum("eqij,ejk->eqik", dphi, jac[elems])
        det = np.abs(np.linalg.det(full))
        grads = None
        if gradients:
            inv = np.linalg.inv(full)
            grads = np.einsum("eqki,qak->eqai", inv, ref_grads)
        points = blending.forward(flat).reshape(len(elems), nq, d)
        yield QuadratureChunk(elems, points, det * rule.weights[None, :], values, grads)


@dataclass(frozen=True)
class SparseOperator:
    """Assembled CSR operator with its symmetry flag."""

    matrix: sp.csr_matrix
    symmetric: bool = True
    name: str = ""

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[0])

    def __matmul__(self, other: np.ndarray) -> np.ndarray:
        return self.matrix @ other

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()


def _scatter(rows: list[np.ndarray], cols: list[np.ndarray], data: list[np.ndarray],
             shape: tuple[int, int]) -> sp.csr_matrix:
    if not data:
        return sp.csr_matrix(shape)
    coo = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=shape
    )
    return coo.tocsr()


def assemble(space: FunctionSpace, kind: Literal["mass", "stiffness"]) -> SparseOperator:
    """Galerkin mass or stiffness matrix on the blended physical domain.

    Raises:
        ValueError: If ``kind`` is unknown.
        GeometryError: Propagated from the element quadrature.
    """
    if kind not in ("mass", "stiffness"):
        raise ValueError(f"Unknown operator kind: {kind!r}")
    n = space.n_dofs
    rows, cols, data = [], [], []
    for q in element_quadrature(space, gradients=(kind == "stiffness")):
        if kind == "mass":
            local = np.einsum("eq,qa,qb->eab", q.weights, q.values, q.values)
        else:
            local = np.einsum("eq,eqai,eqbi->eab", q.weights, q.gradients, q.gradients)
        dofs = space.element_dofs[q.elements]
        rows.append(np.broadcast_to(dofs[:, :, None], local.shape).ravel())
        cols.append(np.broadcast_to(dofs[:, None, :], local.shape).ravel())
        data.append(local.ravel())
    matrix = _scatter(rows, cols, data, (n, n))
    matrix = ((matrix + matrix.T) * 0.5).tocsr()
    logger.info("Assembled %s matrix — dofs=%d nnz=%d", kind, n, matrix.nnz)
    return SparseOperator(matrix, True, kind)


def assemble_load(space: FunctionSpace, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Load vector (f, phi_i) for a scalar function of the physical point."""
    out = np.zeros(space.n_dofs)
    for q in element_quadrature(space):
        fq = np.asarray(f(q.points.reshape(-1, space.dim)), dtype=float).reshape(q.weights.shape)
        local = np.einsum("eq,qa->ea", q.weights * fq, q.values)
        np.add.at(out, space.element_dofs[q.elements], local)
    return out


# ---------------------------------------------------------------------------
# Point evaluation
# ---------------------------------------------------------------------------


def locate_physical(hierarchy: MeshHierarchy, points: np.ndarray, hint: np.ndarray | None = None,
                    clamp: bool = True) -> tuple[Location, np.ndarray, np.ndarray]:
    """Pull physical points back and locate them, projecting unlocated ones.

    Without ``clamp`` only points within ``MMOC_CLAMP_TOL`` of the domain are
    accepted.  With ``clamp`` escaped points are projected onto the boundary
    as long as they lie within ``MMOC_CLAMP_MAX_DISTANCE``; both distances are
    relative to the extent of the coarse mesh.

    Returns:
        The location, the (possibly projected) computational points and the
        mask of points that had to be clamped onto the boundary.

    Raises:
        OutOfDomainError: If a point lies beyond the admissible distance.
    """
    settings = get_settings()
    points = np.atleast_2d(points)
    comp = hierarchy.blending.inverse(points) if clamp else blend(hierarchy.blending, points, "inverse")
    loc = hierarchy.locate(comp, hint)
    missing = ~loc.found
    n_missing = int(missing.sum())
    if n_missing:
        projected, macros = hierarchy.project_to_boundary(comp[missing])
        scale = float(np.ptp(hierarchy.coarse.vertices, axis=0).max())
        limit = (settings.clamp_max_distance if clamp else settings.clamp_tol) * scale
        far = np.linalg.norm(projected - comp[missing], axis=1) > limit
        if np.any(far):
            first = points[np.flatnonzero(missing)[np.argmax(far)]]
            raise OutOfDomainError(
                f"Point {first.tolist()} is outside the domain by more than {limit:.3e}", first
            )
        sub = hierarchy.locate_in_macro(projected, macros)
        comp = comp.copy()
        comp[missing] = projected
        loc = Location(
            macro=np.where(missing, 0, loc.macro),
            element=loc.element.copy(),
            lam=loc.lam.copy(),
            escalations=loc.escalations,
        )
        loc.macro[missing] = sub.macro
        loc.element[missing] = sub.element
        loc.lam[missing] = sub.lam
        logger.debug("Clamped %d points onto the boundary", n_missing)
    return loc, comp, missing


def evaluate_located(fld: ScalarField | VectorField, element: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Evaluate a field at known (element, barycentric) locations."""
    dofs = fld.space.element_dofs[element]
    phi = basis_values(fld.space.degree, lam)
    coeff = fld.coefficients[dofs]
    if isinstance(fld, VectorField):
        return np.einsum("nak,na->nk", coeff, phi)
    return np.einsum("na,na->n", coeff, phi)


def evaluate(fld: ScalarField | VectorField, z: np.ndarray, hint: np.ndarray | int | None = None,
             clamp: bool = False) -> np.ndarray | float:
    """Evaluate a field at physical point(s) ``z``.

    Args:
        fld: Field to evaluate.
        z: One point ``(d,)`` or a batch ``(n, d)``.
        hint: Macro volume index (or one per point) to start the search from.
        clamp: Project points outside the domain onto its boundary instead of raising.

    Returns:
        A float (scalar field, single point) or an array.
    """
    arr = np.asarray(z, dtype=float)
    loc, _, _ = locate_physical(fld.space.hierarchy, arr, None if hint is None else np.asarray(hint), clamp)
    values = evaluate_located(fld, loc.element, loc.lam)
    if arr.ndim == 1:
        return float(values[0]) if isinstance(fld, ScalarField) else values[0]
    return values


def gradient_located(fld: ScalarField, element: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Physical gradient of a scalar field inside given elements, ``(n, d)``."""
    space = fld.space
    origin, jac = space.hierarchy.element_geometry
    comp = origin[element] + np.einsum("nij,nj->ni", jac[element], lam[:, 1:])
    full = np.einsum("nij,njk->nik", space.hierarchy.blending.jacobian(comp), jac[element])
    ref = reference_gradients(space.degree, lam)
    coeff = fld.coefficients[space.element_dofs[element]]
    grad_ref = np.einsum("na,nak->nk", coeff, ref)
    return np.einsum("nki,nk->ni", np.linalg.inv(full), grad_ref)


def l2_error(fld: ScalarField | VectorField, exact: Callable[[np.ndarray], np.ndarray],
             degree: int = 5) -> float:
    """L2 norm of ``fld - exact`` by element quadrature."""
    space = fld.space
    rule = simplex_rule(space.dim, min(degree, 4 if space.dim == 2 else 5))
    total = 0.0
    for q in element_quadrature(space, rule):
        coeff = fld.coefficients[space.element_dofs[q.elements]]
        ref = np.asarray(exact(q.points.reshape(-1, space.dim)), dtype=float)
        if isinstance(fld, VectorField):
            uh = np.einsum("eak,qa->eqk", coeff, q.values)
            diff = uh - ref.reshape(uh.shape)
            total += float(np.einsum("eq,eqk,eqk->", q.weights, diff, diff))
        else:
            uh = coeff @ q.values.T
            diff = uh - ref.reshape(uh.shape)
            total += float(np.einsum("eq,eq,eq->", q.weights, diff, diff))
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# Boundary facets of the finest level
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FacetQuadrature:
    """Quadrature on micro facets of labelled boundary regions.

    Attributes:
        elements: Element owning each facet.
        lam: ``(nf, nq, d + 1)`` barycentric quadrature points in that element.
        weights: ``(nf, nq)`` rule weight times the facet measure.
        points: ``(nf, nq, d)`` physical points.
    """

    elements: np.ndarray
    lam: np.ndarray
    weights: np.ndarray
    points: np.ndarray


def boundary_facet_quadrature(space: FunctionSpace, labels: set[str] | tuple[str, ...],
                              n_points: int = 3) -> FacetQuadrature:
    """Micro facets lying on coarse boundary facets with the given labels.

    A micro facet belongs to a coarse facet when all its vertex DoFs do.
    Facet measures use the straight blended chord.
    """
    hierarchy = space.hierarchy
    d = space.dim
    vertex_dofs = space.element_dofs[:, : d + 1]
    rule = line_rule(n_points) if d == 2 else simplex_rule(2, 2 * n_points - 2)
    facet_lam = rule.barycentric
    elements, opposite = [], []
    for facet in hierarchy.facets_with_label(labels):
        mask = space.facet_dofs(facet)
        on = mask[vertex_dofs]
        for j in range(d + 1):
            others = [k for k in range(d + 1) if k != j]
            hit = np.flatnonzero(np.all(on[:, others], axis=1))
            elements.append(hit)
            opposite.append(np.full(hit.size, j))
    if not elements:
        empty = np.zeros((0,), dtype=np.int64)
        return FacetQuadrature(empty, np.zeros((0, len(rule.weights), d + 1)),
                               np.zeros((0, len(rule.weights))), np.zeros((0, len(rule.weights), d)))
    elements = np.concatenate(elements)
    opposite = np.concatenate(opposite)

    nq = len(rule.weights)
    lam = np.zeros((len(elements), nq, d + 1))
    corners = np.array([[k for k in range(d + 1) if k != j] for j in range(d + 1)])[opposite]
    for slot in range(d):
        np.put_along_axis(lam, np.broadcast_to(corners[:, None, slot:slot + 1], (len(elements), nq, 1)),
                          np.broadcast_to(facet_lam[None, :, slot:slot + 1], (len(elements), nq, 1)),
                          axis=2)
    origin, jac = hierarchy.element_geometry
    comp = origin[elements, None, :] + np.einsum("eij,eqj->eqi", jac[elements], lam[:, :, 1:])
    phys = hierarchy.blending.forward(comp.reshape(-1, d)).reshape(comp.shape)

    corner_comp = origin[elements, None, :] + np.einsum(
        "eij,ekj->eki", jac[elements], np.eye(d + 1)[corners][:, :, 1:]
    )
    corner_phys = hierarchy.blending.forward(corner_comp.reshape(-1, d)).reshape(corner_comp.shape)
    if d == 2:
        measure = np.linalg.norm(corner_phys[:, 1] - corner_phys[:, 0], axis=1)
        weights = measure[:, None] * rule.weights[None, :]
    else:
        cross = np.cross(corner_phys[:, 1] - corner_phys[:, 0], corner_phys[:, 2] - corner_phys[:, 0])
        weights = np.linalg.norm(cross, axis=1)[:, None] * rule.weights[None, :]
    return FacetQuadrature(elements, lam, weights, phys)
