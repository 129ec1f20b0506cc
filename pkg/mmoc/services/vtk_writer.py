"""Legacy ASCII VTK output of P1/P2 fields on the finest level."""

import logging
from pathlib import Path

import numpy as np

from mmoc.services.fem import ScalarField, VectorField

logger = logging.getLogger(__name__)

# (dim, degree) -> VTK cell type
VTK_CELL_TYPES: dict[tuple[int, int], int] = {
    (2, 1): 5,   # VTK_TRIANGLE
    (3, 1): 10,  # VTK_TETRA
    (2, 2): 22,  # VTK_QUADRATIC_TRIANGLE
    (3, 2): 24,  # VTK_QUADRATIC_TETRA
}


def write_vtk(path: str | Path, fld: ScalarField | VectorField, name: str, title: str = "mmoc") -> Path:
    """Write one field as an unstructured grid with point data.

    Args:
        path: Target ``.vtk`` file; parent directories are created.
        fld: Field to write; its space defines points and cells.
        name: Data array name.
        title: Header title line.

    Returns:
        The written path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    space = fld.space
    coords = space.coordinates
    if coords.shape[1] == 2:
        coords = np.column_stack([coords, np.zeros(len(coords))])
    cells = space.element_dofs
    cell_type = VTK_CELL_TYPES[(space.dim, space.degree)]
    n_points, n_cells, n_local = len(coords), len(cells), cells.shape[1]

    with path.open("w") as f:
        f.write("# vtk DataFile Version 2.0\n")
        f.write(f"{title} t={fld.time:.10g}\n")
        f.write("ASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {n_points} double\n")
        np.savetxt(f, coords, fmt="%.16e")
        f.write(f"CELLS {n_cells} {n_cells * (n_local + 1)}\n")
        np.savetxt(f, np.column_stack([np.full(n_cells, n_local), cells]), fmt="%d")
        f.write(f"CELL_TYPES {n_cells}\n")
        np.savetxt(f, np.full(n_cells, cell_type), fmt="%d")
        f.write(f"POINT_DATA {n_points}\n")
        if isinstance(fld, VectorField):
            values = fld.coefficients
            if values.shape[1] == 2:
                values = np.column_stack([values, np.zeros(len(values))])
            f.write(f"VECTORS {name} double\n")
            np.savetxt(f, values, fmt="%.16e")
        else:
            f.write(f"SCALARS {name} double 1\n")
            f.write("LOOKUP_TABLE default\n")
            np.savetxt(f, fld.coefficients, fmt="%.16e")

    logger.debug("Wrote VTK %s — points=%d cells=%d", path.name, n_points, n_cells)
    return path
