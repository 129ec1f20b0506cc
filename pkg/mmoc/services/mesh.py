"""Coarse simplex meshes and their block-structured refinement hierarchy.

Every macro simplex with vertices v_0..v_d is mapped affinely onto the Kuhn
simplex K = {1 >= y_1 >= ... >= y_d >= 0} through x = v_0 + B y, where the
columns of B are v_1 - v_0, ..., v_d - v_{d-1}.  Level L refines K by the
Freudenthal subdivision of the lattice (Z / 2^L)^d: the cube with corner c and
the permutation pi give the child with vertices c, c + e_pi(1), ...,
c + e_pi(1) + ... + e_pi(d).  This is the red refinement (4 children in 2D,
8 in 3D per level) and it induces the same triangulation on every shared
macro facet, so the block-structured grid is conforming across macros.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from itertools import combinations, permutations
from pathlib import Path

import numpy as np

from mmoc.errors import MeshError
from mmoc.services.blending import BlendingMap, IdentityBlending

logger = logging.getLogger(__name__)

INSIDE_TOL = 1e-12

# Local edges of the P2 element, VTK node order.
P2_EDGES: dict[int, tuple[tuple[int, int], ...]] = {
    2: ((0, 1), (1, 2), (2, 0)),
    3: ((0, 1), (1, 2), (2, 0), (0, 3), (1, 3), (2, 3)),
}


class BoundaryTag(str, Enum):
    """Kinds of boundary condition a labelled facet region can carry."""

    DIRICHLET = "Dirichlet"
    NEUMANN = "Neumann"
    FREE_SLIP = "FreeSlip"
    NO_SLIP = "NoSlip"
    INTERIOR = "Interior"


class PrimitiveKind(str, Enum):
    VERTEX = "vertex"
    EDGE = "edge"
    FACE = "face"
    VOLUME = "volume"


# ---------------------------------------------------------------------------
# Coarse mesh
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoarseMesh:
    """Unstructured conforming simplex mesh T_0.

    Attributes:
        vertices: ``(nv, d)`` coordinates of the computational domain, d in {2, 3}.
        elements: ``(ne, d + 1)`` vertex indices per simplex.
        boundary_facets: ``(nb, d)`` vertex indices of every boundary facet.
        boundary_labels: Region label per boundary facet (``"top"``, ``"inner"``, ...).
    """

    vertices: np.ndarray
    elements: np.ndarray
    boundary_facets: np.ndarray
    boundary_labels: tuple[str, ...]

    @property
    def dim(self) -> int:
        return int(self.vertices.shape[1])

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.boundary_labels)))

    def element_jacobians(self) -> np.ndarray:
        """Affine maps from the Kuhn simplex, columns v_{k+1} - v_k."""
        v = self.vertices[self.elements]
        return np.transpose(np.diff(v, axis=1), (0, 2, 1))

    def measure(self) -> float:
        dets = np.abs(np.linalg.det(self.element_jacobians()))
        return float(dets.sum() / (1.0 if self.dim == 2 else 3.0) / 2.0)

    def validate(self) -> None:
        """Check shape, non-degeneracy, conformity and boundary labelling.

        Raises:
            MeshError: On the first violated invariant, naming the element or facet.
        """
        d = self.dim
        if d not in (2, 3):
            raise MeshError(f"Unsupported dimension {d}; expected 2 or 3")
        if self.elements.ndim != 2 or self.elements.shape[1] != d + 1:
            raise MeshError(f"Elements must have {d + 1} vertices each, got shape {self.elements.shape}")
        if len(self.boundary_labels) != len(self.boundary_facets):
            raise MeshError("Every boundary facet needs exactly one label")
        if self.elements.min() < 0 or self.elements.max() >= len(self.vertices):
            raise MeshError("Element references a vertex index out of range")

        scale = float(np.ptp(self.vertices, axis=0).max()) or 1.0
        dets = np.linalg.det(self.element_jacobians())
        degenerate = np.flatnonzero(np.abs(dets) <= 1e-12 * scale**d)
        if degenerate.size:
            raise MeshError(f"Degenerate coarse element {int(degenerate[0])} (zero measure)")

        facets = _element_facets(self.elements)
        keys, counts = np.unique(facets, axis=0, return_counts=True)
        if np.any(counts > 2):
            bad = keys[np.argmax(counts > 2)]
            raise MeshError(f"Non-conforming mesh: facet {bad.tolist()} shared by more than two elements")
        boundary = {tuple(k) for k in keys[counts == 1]}
        listed = [tuple(sorted(f)) for f in np.asarray(self.boundary_facets).tolist()]
        if len(set(listed)) != len(listed):
            raise MeshError("A boundary facet is listed more than once")
        for facet in listed:
            if facet not in boundary:
                raise MeshError(f"Facet {list(facet)} is tagged as boundary but is interior or missing")
        missing = boundary.difference(listed)
        if missing:
            raise MeshError(f"Boundary facet {list(sorted(missing)[0])} carries no tag")


def _element_facets(elements: np.ndarray) -> np.ndarray:
    """Sorted vertex tuples of all element facets, ``(ne * (d + 1), d)``."""
    d1 = elements.shape[1]
    parts = [np.sort(elements[:, list(c)], axis=1) for c in combinations(range(d1), d1 - 1)]
    return np.concatenate(parts, axis=0)


def _labelled_boundary(
    vertices: np.ndarray,
    elements: np.ndarray,
    labeller,
) -> tuple[np.ndarray, tuple[str, ...]]:
    facets = _element_facets(elements)
    keys, counts = np.unique(facets, axis=0, return_counts=True)
    boundary = keys[counts == 1]
    labels = tuple(labeller(vertices[f]) for f in boundary)
    return boundary, labels


def _box_labeller(lower: np.ndarray, upper: np.ndarray):
    names = (("left", "right"), ("bottom", "top")) if len(lower) == 2 else (
        ("left", "right"), ("front", "back"), ("bottom", "top"))

    def label(points: np.ndarray) -> str:
        tol = 1e-12 * float(np.max(upper - lower))
        for axis, (lo_name, hi_name) in enumerate(names):
            if np.all(np.abs(points[:, axis] - lower[axis]) <= tol):
                return lo_name
            if np.all(np.abs(points[:, axis] - upper[axis]) <= tol):
                return hi_name
        return "boundary"

    return label


def rectangle(length: float = 1.0, height: float = 1.0, nx: int = 1, ny: int = 1) -> CoarseMesh:
    """Rectangle [0, length] x [0, height] of nx x ny squares, each split along its
    lower-left to upper-right diagonal.  Facets are labelled left/right/bottom/top.
    """
    xs = np.linspace(0.0, length, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    def vid(i: int, j: int) -> int:
        return i * (ny + 1) + j

    elements = []
    for i in range(nx):
        for j in range(ny):
            elements.append((vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)))
            elements.append((vid(i, j), vid(i, j + 1), vid(i + 1, j + 1)))
    elements = np.array(elements, dtype=np.int64)
    facets, labels = _labelled_boundary(
        vertices, elements, _box_labeller(np.zeros(2), np.array([length, height]))
    )
    return CoarseMesh(vertices, elements, facets, labels)


def unit_square() -> CoarseMesh:
    """The unit square as two triangles sharing the (0,0)-(1,1) diagonal."""
    return rectangle(1.0, 1.0, 1, 1)


def box(lengths: tuple[float, float, float] = (1.0, 1.0, 1.0),
        cells: tuple[int, int, int] = (1, 1, 1)) -> CoarseMesh:
    """Cuboid split into cells, each cell into the six Kuhn tetrahedra."""
    axes = [np.linspace(0.0, lengths[k], cells[k] + 1) for k in range(3)]
    grid = np.meshgrid(*axes, indexing="ij")
    vertices = np.column_stack([g.ravel() for g in grid])
    shape = tuple(c + 1 for c in cells)
    elements = []
    for corner in np.ndindex(*cells):
        for perm in permutations(range(3)):
            w = list(corner)
            tet = [np.ravel_multi_index(tuple(w), shape)]
            for axis in perm:
                w[axis] += 1
                tet.append(np.ravel_multi_index(tuple(w), shape))
            elements.append(tet)
    elements = np.array(elements, dtype=np.int64)
    facets, labels = _labelled_boundary(
        vertices, elements, _box_labeller(np.zeros(3), np.asarray(lengths, dtype=float))
    )
    return CoarseMesh(vertices, elements, facets, labels)


def unit_cube() -> CoarseMesh:
    return box()


def unit_triangle() -> CoarseMesh:
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    elements = np.array([[0, 1, 2]])
    facets, labels = _labelled_boundary(vertices, elements, lambda pts: "boundary")
    return CoarseMesh(vertices, elements, facets, labels)


def unit_tetrahedron() -> CoarseMesh:
    vertices = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    elements = np.array([[0, 1, 2, 3]])
    facets, labels = _labelled_boundary(vertices, elements, lambda pts: "boundary")
    return CoarseMesh(vertices, elements, facets, labels)


def annulus(r_min: float = 0.5, r_max: float = 1.5, n_tangential: int = 12, n_radial: int = 4) -> CoarseMesh:
    """Polygonal ring mesh: n_radial + 1 regular n_tangential-gons, quads split in two.

    Facets on the innermost ring are labelled ``inner``, on the outermost ``outer``.
    Use together with :class:`~mmoc.services.blending.AnnulusBlending`.
    """
    if n_tangential < 3 or n_radial < 1:
        raise MeshError(f"Annulus needs n_tangential >= 3 and n_radial >= 1, got {n_tangential}, {n_radial}")
    radii = np.linspace(r_min, r_max, n_radial + 1)
    angles = 2.0 * np.pi * np.arange(n_tangential) / n_tangential
    vertices = np.array([[r * np.cos(a), r * np.sin(a)] for r in radii for a in angles])

    def vid(k: int, j: int) -> int:
        return k * n_tangential + j % n_tangential

    elements = []
    for k in range(n_radial):
        for j in range(n_tangential):
            elements.append((vid(k, j), vid(k + 1, j), vid(k + 1, j + 1)))
            elements.append((vid(k, j), vid(k, j + 1), vid(k + 1, j + 1)))
    elements = np.array(elements, dtype=np.int64)

    def label(points: np.ndarray) -> str:
        ring = np.linalg.norm(points, axis=1)
        if np.allclose(ring, r_min, rtol=1e-12):
            return "inner"
        if np.allclose(ring, r_max, rtol=1e-12):
            return "outer"
        return "boundary"

    facets, labels = _labelled_boundary(vertices, elements, label)
    return CoarseMesh(vertices, elements, facets, labels)


def read_coarse_mesh(path: str | Path) -> CoarseMesh:
    """Parse the plain-text format: ``dim nv ne nb`` header, then vertex lines,
    element lines and boundary-facet lines ending in their label.

    Raises:
        MeshError: If the file is missing, truncated or malformed.
    """
    path = Path(path)
    if not path.exists():
        raise MeshError(f"Mesh file not found: {path}")
    lines = [ln.split("#", 1)[0].strip() for ln in path.read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    try:
        dim, nv, ne, nb = (int(tok) for tok in lines[0].split())
        body = lines[1:]
        if len(body) < nv + ne + nb:
            raise MeshError(f"Mesh file {path.name} is truncated: expected {nv + ne + nb} records")
        vertices = np.array([[float(t) for t in ln.split()[:dim]] for ln in body[:nv]])
        elements = np.array([[int(t) for t in ln.split()[: dim + 1]] for ln in body[nv : nv + ne]],
                            dtype=np.int64)
        facets, labels = [], []
        for ln in body[nv + ne : nv + ne + nb]:
            tokens = ln.split()
            facets.append([int(t) for t in tokens[:dim]])
            labels.append(tokens[dim] if len(tokens) > dim else "boundary")
    except (IndexError, ValueError) as exc:
        raise MeshError(f"Malformed mesh file {path.name}: {exc}") from exc
    mesh = CoarseMesh(vertices, elements, np.array(facets, dtype=np.int64).reshape(nb, dim), tuple(labels))
    mesh.validate()
    logger.info("Read coarse mesh %s — dim=%d vertices=%d elements=%d", path.name, dim, nv, ne)
    return mesh


def write_coarse_mesh(mesh: CoarseMesh, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = [f"{mesh.dim} {len(mesh.vertices)} {len(mesh.elements)} {len(mesh.boundary_facets)}"]
    out += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    out += [" ".join(str(int(i)) for i in e) for e in mesh.elements]
    out += [" ".join(str(int(i)) for i in f) + f" {lab}"
            for f, lab in zip(mesh.boundary_facets, mesh.boundary_labels)]
    path.write_text("\n".join(out) + "\n")
    return path


# ---------------------------------------------------------------------------
# Kuhn lattice and Freudenthal cells
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KuhnLattice:
    """Integer points w with M >= w_1 >= ... >= w_d >= 0 (M = resolution)."""

    dim: int
    resolution: int

    @cached_property
    def points(self) -> np.ndarray:
        d, m = self.dim, self.resolution
        grid = np.indices((m + 1,) * d).reshape(d, -1).T
        keep = np.all(np.diff(grid, axis=1) <= 0, axis=1)
        return grid[keep].astype(np.int64)

    @cached_property
    def barycentric(self) -> np.ndarray:
        """Integer barycentric weights n_0..n_d summing to M, one row per point."""
        w = self.points
        n = np.empty((len(w), self.dim + 1), dtype=np.int64)
        n[:, 0] = self.resolution - w[:, 0]
        n[:, 1:-1] = w[:, :-1] - w[:, 1:]
        n[:, -1] = w[:, -1]
        return n

    @cached_property
    def dense_to_point(self) -> np.ndarray:
        """Map from the flat index of the bounding cube grid to the point index (-1 outside)."""
        m1 = self.resolution + 1
        table = np.full(m1**self.dim, -1, dtype=np.int64)
        flat = np.ravel_multi_index(self.points.T, (m1,) * self.dim)
        table[flat] = np.arange(len(self.points))
        return table

    def point_index(self, w: np.ndarray) -> np.ndarray:
        m1 = self.resolution + 1
        idx = self.dense_to_point[np.ravel_multi_index(np.moveaxis(w, -1, 0), (m1,) * self.dim)]
        if np.any(idx < 0):
            raise MeshError("Lattice coordinate outside the Kuhn simplex")
        return idx


@dataclass(frozen=True)
class KuhnCells:
    """Freudenthal children of the Kuhn simplex at ``n_intervals`` per axis."""

    dim: int
    n_intervals: int

    @cached_property
    def permutations(self) -> tuple[tuple[int, ...], ...]:
        return tuple(permutations(range(self.dim)))

    @cached_property
    def perm_code_table(self) -> np.ndarray:
        d = self.dim
        table = np.full(d**d, -1, dtype=np.int64)
        for idx, perm in enumerate(self.permutations):
            table[sum(p * d**k for k, p in enumerate(perm))] = idx
        return table

    @cached_property
    def _tables(self) -> tuple[np.ndarray, np.ndarray]:
        d, n = self.dim, self.n_intervals
        cubes = np.indices((n,) * d, dtype=np.int32).reshape(d, -1).T
        verts = np.empty((len(cubes), len(self.permutations), d + 1, d), dtype=np.int32)
        for p, perm in enumerate(self.permutations):
            w = cubes.copy()
            verts[:, p, 0] = w
            for k, axis in enumerate(perm):
                w[:, axis] += 1
                verts[:, p, k + 1] = w
        inside = np.all(np.diff(verts, axis=-1) <= 0, axis=(-1, -2))
        lookup = np.full(inside.shape, -1, dtype=np.int64)
        lookup[inside] = np.arange(int(inside.sum()))
        return lookup, verts[inside]

    @property
    def lookup(self) -> np.ndarray:
        """``(n^d, d!)`` table: cube flat index and permutation index to local cell, -1 outside K."""
        return self._tables[0]

    @property
    def vertices(self) -> np.ndarray:
        """``(n_cells, d + 1, d)`` integer lattice coordinates of each child."""
        return self._tables[1]

    def __len__(self) -> int:
        return len(self.vertices)


@dataclass(frozen=True)
class LatticeNumbering:
    """Global numbering of the lattice points of all macros at one resolution.

    Shared points are identified by their support (the macro vertices with
    nonzero integer barycentric weight) so every interface point gets one id
    and one coordinate, computed once.

    Attributes:
        lattice: The per-macro lattice that was numbered.
        point_ids: ``(n_macros, n_points)`` global id of each macro-local point.
        support: ``(n, d + 1)`` supporting macro vertex ids, ascending, padded with -1.
        weights: ``(n, d + 1)`` matching integer barycentric weights.
        coordinates: ``(n, d)`` computational coordinates.
        owner_volume: Lowest-index macro volume containing each point.
    """

    lattice: KuhnLattice
    point_ids: np.ndarray
    support: np.ndarray
    weights: np.ndarray
    coordinates: np.ndarray
    owner_volume: np.ndarray

    def __len__(self) -> int:
        return len(self.coordinates)

    @property
    def support_size(self) -> np.ndarray:
        return (self.support >= 0).sum(axis=1)


def number_lattice(coarse: CoarseMesh, resolution: int) -> LatticeNumbering:
    lattice = KuhnLattice(coarse.dim, resolution)
    n = lattice.barycentric
    nm, npts = len(coarse.elements), len(n)
    big = np.iinfo(np.int64).max
    vids = np.broadcast_to(coarse.elements[:, None, :], (nm, npts, coarse.dim + 1))
    weights = np.broadcast_to(n[None], vids.shape)
    keyed = np.where(weights > 0, vids, big)
    order = np.argsort(keyed, axis=-1, kind="stable")
    sorted_vid = np.take_along_axis(keyed, order, axis=-1)
    sorted_w = np.take_along_axis(weights, order, axis=-1)
    sorted_vid = np.where(sorted_vid == big, -1, sorted_vid)
    keys = np.concatenate([sorted_vid, sorted_w], axis=-1).reshape(nm * npts, -1)
    unique, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)

    support = unique[:, : coarse.dim + 1]
    support_w = unique[:, coarse.dim + 1 :]
    # Padded entries carry weight 0, so vertex 0 is a harmless stand-in.
    coords = (support_w[:, :, None] * coarse.vertices[np.maximum(support, 0)]).sum(axis=1) / resolution

    owner = np.full(len(unique), nm, dtype=np.int64)
    np.minimum.at(owner, inverse, np.repeat(np.arange(nm, dtype=np.int64), npts))
    return LatticeNumbering(
        lattice=lattice,
        point_ids=inverse.reshape(nm, npts),
        support=support,
        weights=support_w,
        coordinates=coords,
        owner_volume=owner,
    )


# ---------------------------------------------------------------------------
# Hierarchy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MacroPrimitive:
    """One coarse-grid primitive.

    Attributes:
        id: Dense id; vertices first, then edges, faces (3D) and volumes.
        kind: Primitive kind.
        vertices: Sorted coarse vertex ids spanning the primitive.
        owner: Partition rank (0 until a layout is applied).
        neighbors: Volume primitive ids adjacent to this primitive.
    """

    id: int
    kind: PrimitiveKind
    vertices: tuple[int, ...]
    owner: int = 0
    neighbors: tuple[int, ...] = ()


@dataclass(frozen=True)
class RefinedMesh:
    """Level-l simplex mesh in computational coordinates."""

    level: int
    vertices: np.ndarray
    elements: np.ndarray

    def measures(self) -> np.ndarray:
        v = self.vertices[self.elements]
        d = self.vertices.shape[1]
        dets = np.linalg.det(np.transpose(v[:, 1:] - v[:, :1], (0, 2, 1)))
        return np.abs(dets) / (2.0 if d == 2 else 6.0)


@dataclass(frozen=True)
class Location:
    """Result of a point search.

    Attributes:
        macro: Macro volume index per point (-1 when not found).
        element: Global micro-element index ``macro * cells_per_macro + local``.
        lam: ``(n, d + 1)`` barycentric coordinates inside the micro element.
        escalations: Points that needed the global scan.
    """

    macro: np.ndarray
    element: np.ndarray
    lam: np.ndarray
    escalations: int = 0

    @property
    def found(self) -> np.ndarray:
        return self.macro >= 0


@dataclass
class MeshHierarchy:
    """Coarse mesh plus ``level`` uniform refinements and the blending map."""

    coarse: CoarseMesh
    level: int
    blending: BlendingMap
    primitives: list[MacroPrimitive] = field(default_factory=list)

    def __post_init__(self) -> None:
        jac = self.coarse.element_jacobians()
        self.macro_origin = self.coarse.vertices[self.coarse.elements[:, 0]].astype(float)
        self.macro_jacobian = jac
        self.macro_inverse = np.linalg.inv(jac)
        self.cells = KuhnCells(self.dim, self.n_intervals)
        self._primitive_index: dict[tuple[int, ...], int] = {}
        if not self.primitives:
            self.primitives = self._build_primitives()
        for prim in self.primitives:
            self._primitive_index[prim.vertices] = prim.id
        self.volume_offset = len(self.primitives) - self.n_macros
        self.macro_neighbors = self._vertex_neighbors()
        self._build_boundary_index()

    # -- sizes ------------------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.coarse.dim

    @property
    def n_intervals(self) -> int:
        return 2**self.level

    @property
    def n_macros(self) -> int:
        return len(self.coarse.elements)

    @property
    def cells_per_macro(self) -> int:
        return len(self.cells)

    @property
    def n_elements(self) -> int:
        return self.n_macros * self.cells_per_macro

    # -- primitives -------------------------------------------------------------

    def _build_primitives(self) -> list[MacroPrimitive]:
        elements = self.coarse.elements
        incident: dict[tuple[int, ...], list[int]] = {}
        groups: list[tuple[PrimitiveKind, int]] = [(PrimitiveKind.VERTEX, 1), (PrimitiveKind.EDGE, 2)]
        if self.dim == 3:
            groups.append((PrimitiveKind.FACE, 3))
        for m, elem in enumerate(elements):
            for _, size in groups:
                for sub in combinations(sorted(int(v) for v in elem), size):
                    incident.setdefault(sub, []).append(m)
        n_sub = sum(1 for key in incident)
        prims: list[MacroPrimitive] = []
        for kind, size in groups:
            keys = sorted(k for k in incident if len(k) == size)
            for key in keys:
                vols = tuple(n_sub + m for m in sorted(set(incident[key])))
                prims.append(MacroPrimitive(len(prims), kind, key, 0, vols))
        neighbors = self._vertex_neighbors_of(elements)
        for m, elem in enumerate(elements):
            prims.append(MacroPrimitive(
                len(prims), PrimitiveKind.VOLUME, tuple(sorted(int(v) for v in elem)), 0,
                tuple(n_sub + k for k in neighbors[m]),
            ))
        return prims

    @staticmethod
    def _vertex_neighbors_of(elements: np.ndarray) -> list[list[int]]:
        by_vertex: dict[int, set[int]] = {}
        for m, elem in enumerate(elements):
            for v in elem:
                by_vertex.setdefault(int(v), set()).add(m)
        result = []
        for m, elem in enumerate(elements):
            near = set().union(*(by_vertex[int(v)] for v in elem))
            near.discard(m)
            result.append(sorted(near))
        return result

    def _vertex_neighbors(self) -> np.ndarray:
        lists = self._vertex_neighbors_of(self.coarse.elements)
        width = max((len(n) for n in lists), default=0)
        table = np.full((self.n_macros, max(width, 1)), -1, dtype=np.int64)
        for m, near in enumerate(lists):
            table[m, : len(near)] = near
        return table

    def primitive_id(self, vertices: tuple[int, ...]) -> int:
        """Id of the primitive spanned by the given coarse vertices."""
        return self._primitive_index[tuple(sorted(int(v) for v in vertices))]

    def volume_primitive(self, macro: int | np.ndarray) -> int | np.ndarray:
        return self.volume_offset + macro

    # -- boundary ---------------------------------------------------------------

    def _build_boundary_index(self) -> None:
        facets = np.sort(np.asarray(self.coarse.boundary_facets, dtype=np.int64), axis=1)
        elements = self.coarse.elements
        owner = np.empty(len(facets), dtype=np.int64)
        lookup: dict[tuple[int, ...], int] = {}
        d1 = elements.shape[1]
        for m, elem in enumerate(elements):
            for sub in combinations(sorted(int(v) for v in elem), d1 - 1):
                lookup.setdefault(sub, m)
        for i, f in enumerate(facets):
            owner[i] = lookup[tuple(int(v) for v in f)]
        self.boundary_facet_macro = owner
        self.boundary_facet_points = self.coarse.vertices[facets]

    def facets_with_label(self, labels: set[str] | frozenset[str] | tuple[str, ...]) -> np.ndarray:
        wanted = set(labels)
        return np.array([i for i, lab in enumerate(self.coarse.boundary_labels) if lab in wanted],
                        dtype=np.int64)

    def project_to_boundary(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest point on the boundary of the computational domain.

        Returns:
            Projected points and the macro volume owning the nearest facet.
        """
        points = np.atleast_2d(points)
        facets = self.boundary_facet_points
        if self.dim == 2:
            cand, dist = _closest_on_segments(points, facets[:, 0], facets[:, 1])
        else:
            cand, dist = _closest_on_triangles(points, facets)
        best = np.argmin(dist, axis=1)
        rows = np.arange(len(points))
        return cand[rows, best], self.boundary_facet_macro[best]

    # -- point location ---------------------------------------------------------

    def to_reference(self, points: np.ndarray, macros: np.ndarray) -> np.ndarray:
        """Coordinates y in the Kuhn simplex of the given macros."""
        rel = points - self.macro_origin[macros]
        return np.einsum("nij,nj->ni", self.macro_inverse[macros], rel)

    def _inside(self, points: np.ndarray, macros: np.ndarray, tol: float = INSIDE_TOL) -> np.ndarray:
        y = self.to_reference(points, macros)
        ok = (y[:, 0] <= 1.0 + tol) & (y[:, -1] >= -tol)
        if self.dim > 1:
            ok &= np.all(np.diff(y, axis=1) <= tol, axis=1)
        return ok

    def locate_in_macro(self, points: np.ndarray, macros: np.ndarray) -> Location:
        """O(1) micro-element search inside known macros (points are projected onto K)."""
        d, n_int = self.dim, self.n_intervals
        y = np.clip(self.to_reference(points, macros), 0.0, 1.0)
        y = np.minimum.accumulate(y, axis=1)
        s = y * n_int
        cube = np.clip(np.floor(s).astype(np.int64), 0, n_int - 1)
        frac = s - cube
        order = np.argsort(-frac, axis=1, kind="stable")
        fs = np.take_along_axis(frac, order, axis=1)
        cube_flat = np.ravel_multi_index(cube.T, (n_int,) * d)
        code = (order * (d ** np.arange(d))).sum(axis=1)
        local = self.cells.lookup[cube_flat, self.cells.perm_code_table[code]]

        outside = local < 0
        if np.any(outside):
            fs[outside] = frac[outside]
            local[outside] = self.cells.lookup[cube_flat[outside], 0]
        lam = np.empty((len(points), d + 1))
        lam[:, 0] = 1.0 - fs[:, 0]
        lam[:, 1:-1] = fs[:, :-1] - fs[:, 1:]
        lam[:, -1] = fs[:, -1]
        return Location(
            macro=np.asarray(macros, dtype=np.int64),
            element=macros * self.cells_per_macro + local,
            lam=lam,
        )

    def locate(self, points: np.ndarray, hint: np.ndarray | None = None) -> Location:
        """Find the macro and micro element containing computational points.

        The hinted macro is tried first, then its vertex neighbours, then all
        macros.  Points found nowhere get ``macro == -1``.

        Args:
            points: ``(n, d)`` computational coordinates.
            hint: Optional ``(n,)`` macro index to start from.
        """
        points = np.atleast_2d(points)
        n = len(points)
        macro = np.full(n, -1, dtype=np.int64)
        pending = np.arange(n)
        if hint is not None:
            hint = np.broadcast_to(np.asarray(hint, dtype=np.int64), (n,))
            ok = self._inside(points, hint)
            macro[ok] = hint[ok]
            pending = np.flatnonzero(~ok)
            for k in range(self.macro_neighbors.shape[1]):
                if not pending.size:
                    break
                cand = self.macro_neighbors[hint[pending], k]
                valid = cand >= 0
                idx, cand = pending[valid], cand[valid]
                ok = self._inside(points[idx], cand)
                macro[idx[ok]] = cand[ok]
                pending = pending[macro[pending] < 0]

        escalations = int(pending.size) if hint is not None else 0
        if escalations:
            logger.debug("Point search escalated to global scan — points=%d", escalations)
        for m in range(self.n_macros):
            if not pending.size:
                break
            ok = self._inside(points[pending], np.full(pending.size, m))
            macro[pending[ok]] = m
            pending = pending[~ok]

        found = macro >= 0
        element = np.full(n, -1, dtype=np.int64)
        lam = np.zeros((n, self.dim + 1))
        if np.any(found):
            sub = self.locate_in_macro(points[found], macro[found])
            element[found] = sub.element
            lam[found] = sub.lam
        return Location(macro, element, lam, escalations)

    # -- geometry of the finest level -------------------------------------------

    @cached_property
    def element_geometry(self) -> tuple[np.ndarray, np.ndarray]:
        """Affine map of every micro element in computational coordinates.

        Returns:
            ``origin`` ``(ne, d)`` and ``jacobian`` ``(ne, d, d)`` whose columns are
            the edges from the first vertex to the others.
        """
        n_int = self.n_intervals
        cell = self.cells.vertices.astype(float) / n_int
        origin_ref = cell[:, 0]
        edges_ref = np.transpose(cell[:, 1:] - cell[:, :1], (0, 2, 1))
        origin = self.macro_origin[:, None, :] + np.einsum("mij,cj->mci", self.macro_jacobian, origin_ref)
        jac = np.einsum("mij,cjk->mcik", self.macro_jacobian, edges_ref)
        d = self.dim
        return origin.reshape(-1, d), jac.reshape(-1, d, d)

    @cached_property
    def vertex_numbering(self) -> LatticeNumbering:
        return number_lattice(self.coarse, self.n_intervals)

    def level_mesh(self, level: int) -> RefinedMesh:
        """The level-``level`` mesh T_level in computational coordinates."""
        if not 0 <= level <= self.level:
            raise ValueError(f"Level {level} outside 0..{self.level}")
        numbering = (self.vertex_numbering if level == self.level
                     else number_lattice(self.coarse, 2**level))
        cells = self.cells if level == self.level else KuhnCells(self.dim, 2**level)
        local = numbering.lattice.point_index(cells.vertices.astype(np.int64))
        elements = numbering.point_ids[:, local].reshape(-1, self.dim + 1)
        return RefinedMesh(level, numbering.coordinates, elements)

    @property
    def levels(self) -> list[RefinedMesh]:
        return [self.level_mesh(ell) for ell in range(self.level + 1)]

    @cached_property
    def h_min(self) -> float:
        return min_edge_length(self)


def _closest_on_segments(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ab = b - a
    t = np.einsum("nfi,fi->nf", p[:, None, :] - a[None], ab) / np.einsum("fi,fi->f", ab, ab)
    t = np.clip(t, 0.0, 1.0)
    cand = a[None] + t[..., None] * ab[None]
    return cand, np.linalg.norm(cand - p[:, None, :], axis=-1)


def _closest_on_triangles(p: np.ndarray, tri: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    e0, e1 = b - a, c - a
    rel = p[:, None, :] - a[None]
    d00 = np.einsum("fi,fi->f", e0, e0)
    d01 = np.einsum("fi,fi->f", e0, e1)
    d11 = np.einsum("fi,fi->f", e1, e1)
    r0 = np.einsum("nfi,fi->nf", rel, e0)
    r1 = np.einsum("nfi,fi->nf", rel, e1)
    det = d00 * d11 - d01 * d01
    s = (d11 * r0 - d01 * r1) / det
    t = (d00 * r1 - d01 * r0) / det
    inside = (s >= 0) & (t >= 0) & (s + t <= 1)
    plane = a[None] + s[..., None] * e0[None] + t[..., None] * e1[None]

    best, best_d = plane, np.where(inside, np.linalg.norm(plane - p[:, None, :], axis=-1), np.inf)
    for u, v in ((a, b), (b, c), (c, a)):
        cand, dist = _closest_on_segments(p, u, v)
        better = (~inside) & (dist < best_d)
        best = np.where(better[..., None], cand, best)
        best_d = np.where(better, dist, best_d)
    return best, best_d


def min_edge_length(hierarchy: MeshHierarchy) -> float:
    """Shortest physical (blended) edge of the finest level."""
    mesh = hierarchy.level_mesh(hierarchy.level)
    d1 = mesh.elements.shape[1]
    pairs = np.concatenate([mesh.elements[:, [i, j]] for i, j in combinations(range(d1), 2)])
    pairs = np.unique(np.sort(pairs, axis=1), axis=0)
    phys = hierarchy.blending.forward(mesh.vertices)
    lengths = np.linalg.norm(phys[pairs[:, 1]] - phys[pairs[:, 0]], axis=1)
    return float(lengths.min())


def refine(coarse: CoarseMesh, level: int, blending: BlendingMap | None = None) -> MeshHierarchy:
    """Validate the coarse mesh and build its level-``level`` hierarchy.

    Args:
        coarse: Conforming coarse simplex mesh.
        level: Refinement depth L >= 0.
        blending: Map onto the physical domain; identity when omitted.

    Raises:
        MeshError: If the coarse mesh is invalid or ``level`` is negative.
    """
    if level < 0:
        raise MeshError(f"Refinement level must be non-negative, got {level}")
    coarse.validate()
    hierarchy = MeshHierarchy(coarse, level, blending or IdentityBlending(coarse.dim))
    logger.info(
        "Refined mesh — dim=%d macros=%d level=%d micro_elements=%d",
        coarse.dim, hierarchy.n_macros, level, hierarchy.n_elements,
    )
    return hierarchy
