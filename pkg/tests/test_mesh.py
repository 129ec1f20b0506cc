"""Mesh hierarchy tests: refinement counts, conformity, point location and blending.

Every scenario runs on coarse meshes of a few macros and finishes in well under a second.
"""

import math

import numpy as np
import pytest

from mmoc.errors import MeshError, OutOfDomainError
from mmoc.services.blending import AnnulusBlending, blend
from mmoc.services.fem import assemble, build_space
from mmoc.services.mesh import (
    CoarseMesh,
    annulus,
    read_coarse_mesh,
    rectangle,
    refine,
    unit_cube,
    unit_square,
    write_coarse_mesh,
)

# ─── helpers ──────────────────────────────────────────────────────────────────


def _facet_counts(elements: np.ndarray) -> np.ndarray:
    """How many elements share each facet of a simplex mesh."""
    d1 = elements.shape[1]
    facets = np.concatenate([np.delete(elements, j, axis=1) for j in range(d1)])
    _, counts = np.unique(np.sort(facets, axis=1), axis=0, return_counts=True)
    return counts


def _assert_located(hierarchy, points: np.ndarray, loc) -> None:
    """Barycentric coordinates must be valid and reproduce the points."""
    assert np.all(loc.found), f"{int((~loc.found).sum())} points were not located"
    assert np.all(loc.lam >= -1e-12), f"Negative barycentric coordinate: {loc.lam.min()}"
    assert np.allclose(loc.lam.sum(axis=1), 1.0, atol=1e-12), "Barycentric coordinates must sum to 1"
    origin, jac = hierarchy.element_geometry
    rebuilt = origin[loc.element] + np.einsum("nij,nj->ni", jac[loc.element], loc.lam[:, 1:])
    assert np.allclose(rebuilt, points, atol=1e-12), "Located element does not contain the point"


# ─── Scenario 1: Refinement counts ────────────────────────────────────────────


@pytest.mark.parametrize("level", [0, 1, 3])
def test_01_refinement_counts_2d(level):
    """Level L of the two-triangle square has 2 * 4^L elements and (2^L + 1)^2 vertices."""
    h = refine(unit_square(), level)
    mesh = h.level_mesh(level)
    n = 2**level + 1
    assert h.n_elements == 2 * 4**level, f"Expected {2 * 4**level} elements, got {h.n_elements}"
    assert len(mesh.elements) == h.n_elements
    assert len(mesh.vertices) == n * n, f"Expected {n * n} vertices, got {len(mesh.vertices)}"
    assert math.isclose(mesh.measures().sum(), 1.0, rel_tol=1e-12), "Element areas must tile the square"
    print(f"  ✓ L={level}: {h.n_elements} elements, {len(mesh.vertices)} vertices")


def test_02_refinement_counts_3d():
    """Red refinement of the six-tetrahedron cube: 8 children per level."""
    h = refine(unit_cube(), 2)
    mesh = h.level_mesh(2)
    assert h.n_elements == 6 * 8**2
    assert len(mesh.vertices) == 5**3, f"Expected 125 vertices, got {len(mesh.vertices)}"
    assert math.isclose(mesh.measures().sum(), 1.0, rel_tol=1e-12)
    print(f"  ✓ cube L=2: {h.n_elements} tetrahedra")


# ─── Scenario 2: Conformity across macro interfaces ───────────────────────────


@pytest.mark.parametrize("coarse, boundary_facets", [
    (unit_square(), 4 * 4),
    (rectangle(2.0, 1.0, 2, 1), 6 * 4),
])
def test_03_refined_mesh_is_conforming(coarse, boundary_facets):
    """Every facet is shared by at most two elements; only the domain boundary is single."""
    h = refine(coarse, 2)
    counts = _facet_counts(h.level_mesh(2).elements)
    assert counts.max() == 2, "A facet is shared by more than two elements"
    assert int((counts == 1).sum()) == boundary_facets, (
        f"Expected {boundary_facets} boundary facets, got {int((counts == 1).sum())} (hanging nodes?)"
    )
    print(f"  ✓ {len(counts)} facets, {boundary_facets} on the boundary")


def test_04_coarse_levels_nest():
    """Vertices of every coarser level are vertices of the finest level."""
    h = refine(rectangle(1.0, 1.0, 2, 1), 3)
    fine = {tuple(np.round(v, 12)) for v in h.level_mesh(3).vertices}
    for mesh in h.levels[:-1]:
        coarse = {tuple(np.round(v, 12)) for v in mesh.vertices}
        assert coarse <= fine, f"Level {mesh.level} has vertices missing from the finest level"
    print("  ✓ levels 0..2 nest in level 3")


# ─── Scenario 3: Point location ───────────────────────────────────────────────


def test_05_locate_random_points_2d():
    h = refine(rectangle(1.0, 1.0, 2, 2), 3)
    points = np.random.default_rng(7).random((500, 2))
    _assert_located(h, points, h.locate(points))
    print("  ✓ 500 random points located")


def test_06_locate_random_points_3d():
    h = refine(unit_cube(), 2)
    points = np.random.default_rng(11).random((300, 3))
    _assert_located(h, points, h.locate(points))
    print("  ✓ 300 random points located in the cube")


def test_07_locate_with_wrong_hint_walks_to_neighbour():
    """A hint pointing at the neighbouring macro still finds the point without a global scan."""
    h = refine(unit_square(), 2)
    points = np.array([[0.9, 0.1], [0.8, 0.3]])
    loc = h.locate(points, hint=np.array([1, 1]))
    _assert_located(h, points, loc)
    assert loc.escalations == 0, f"Expected no escalations, got {loc.escalations}"


def test_08_points_outside_are_not_found():
    h = refine(unit_square(), 1)
    loc = h.locate(np.array([[1.5, 0.5], [-0.1, 0.2]]))
    assert not np.any(loc.found), "Points outside the square must not be located"


def test_09_h_min_of_uniform_square():
    h = refine(unit_square(), 3)
    assert math.isclose(h.h_min, 1.0 / 8.0, rel_tol=1e-12), f"h_min={h.h_min}"


# ─── Scenario 4: Invalid coarse meshes ────────────────────────────────────────


def test_10_degenerate_element_rejected():
    mesh = CoarseMesh(
        vertices=np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]),
        elements=np.array([[0, 1, 2]]),
        boundary_facets=np.array([[0, 1], [1, 2], [0, 2]]),
        boundary_labels=("boundary",) * 3,
    )
    with pytest.raises(MeshError, match="Degenerate coarse element 0"):
        refine(mesh, 1)
    print("  ✓ Degenerate element rejected")


def test_11_untagged_boundary_facet_rejected():
    square = unit_square()
    mesh = CoarseMesh(square.vertices, square.elements, square.boundary_facets[:-1], square.boundary_labels[:-1])
    with pytest.raises(MeshError, match="carries no tag"):
        mesh.validate()


def test_12_negative_level_rejected():
    with pytest.raises(MeshError):
        refine(unit_square(), -1)


def test_13_mesh_file_round_trip(tmp_path):
    mesh = rectangle(1.5, 1.0, 3, 2)
    path = write_coarse_mesh(mesh, tmp_path / "box.mesh")
    back = read_coarse_mesh(path)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.elements, mesh.elements)
    assert back.boundary_labels == mesh.boundary_labels
    assert set(back.labels) == {"left", "right", "bottom", "top"}
    print(f"  ✓ Mesh file round trip, labels={back.labels}")


def test_14_truncated_mesh_file_rejected(tmp_path):
    path = tmp_path / "broken.mesh"
    path.write_text("2 4 2 4\n0 0\n1 0\n")
    with pytest.raises(MeshError, match="truncated"):
        read_coarse_mesh(path)


def test_15_missing_mesh_file_rejected(tmp_path):
    with pytest.raises(MeshError, match="not found"):
        read_coarse_mesh(tmp_path / "nope.mesh")


# ─── Scenario 5: Annulus blending ─────────────────────────────────────────────


def _annulus_space(level: int = 2, degree: int = 2):
    h = refine(annulus(0.5, 1.5, 12, 4), level, AnnulusBlending(0.5, 1.5, 12))
    return build_space(h, degree)


def test_16_blended_boundary_dofs_lie_on_circles():
    space = _annulus_space()
    for label, radius in (("inner", 0.5), ("outer", 1.5)):
        mask = space.boundary_dofs((label,))
        r = np.linalg.norm(space.coordinates[mask], axis=1)
        assert mask.any(), f"No DoFs on {label}"
        assert np.allclose(r, radius, atol=1e-12), f"{label} DoFs off the circle: max dev {np.abs(r - radius).max()}"
    print("  ✓ Inner and outer DoFs lie on the circles")


def test_17_blended_area_matches_annulus():
    """Row sums of the mass matrix integrate 1 over the curved domain."""
    space = _annulus_space(level=3)
    area = float(assemble(space, "mass").matrix.sum())
    assert math.isclose(area, 2.0 * math.pi, rel_tol=1e-5), f"Area {area} != 2 pi"
    print(f"  ✓ Blended area {area:.8f}")


def test_18_blend_round_trip_and_out_of_domain():
    mapping = AnnulusBlending(0.5, 1.5, 12)
    x = np.array([[0.7, 0.2], [-0.3, 1.1], [0.0, -1.2]])
    back = blend(mapping, blend(mapping, x, "inverse"), "forward")
    assert np.allclose(back, x, atol=1e-13)
    with pytest.raises(OutOfDomainError):
        blend(mapping, np.array([3.0, 0.0]), "inverse")
    print("  ✓ Blending round trip and out-of-domain rejection")
