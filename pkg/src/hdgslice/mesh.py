"""Structured meshes for 1D intervals and 2D axis-aligned rectangles.

Elements are uniform cells; the skeleton is the set of all faces between
fluid cells plus the faces on the domain boundary and around masked (solid)
cells.  Every face stores the outward normal of its designated "minus"
element; for interior faces the minus element is the one with the smaller
element index, so normals point from lower to higher index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# boundary labels used to look up boundary conditions
LABEL_LEFT = "left"
LABEL_RIGHT = "right"
LABEL_BOTTOM = "bottom"
LABEL_TOP = "top"
LABEL_SOLID = "solid"


@dataclass
class MeshTopology:
    """Connectivity and geometry of a structured 1D or 2D mesh.

    Faces are enumerated deterministically: x-normal faces first (ordered by
    interface column, then row), then z-normal faces (ordered by interface
    row, then column).  Faces touching no fluid cell are dropped.

    Attributes
    ----------
    dimension : 1 or 2
    n_elements : number of fluid elements
    cell_of_element : flat grid-cell index of each fluid element
    element_of_cell : fluid element index per grid cell (-1 for solid)
    face_minus, face_plus : element indices per face (-1 when no plus side)
    face_normal : (n_faces, dimension) outward normal of the minus element
    face_center : (n_faces, dimension) face midpoints
    face_measure : face length (1.0 for the point faces of a 1D mesh)
    face_boundary : boolean, True for boundary faces
    face_label : boundary label per face ("" for interior faces)
    element_faces : (n_elements, 2*dimension) global face ids, ordered
        west/east in 1D and west/east/south/north in 2D
    """

    dimension: int
    nx: int
    nz: int
    x_range: tuple[float, float]
    z_range: tuple[float, float]
    fluid: np.ndarray
    cell_of_element: np.ndarray
    element_of_cell: np.ndarray
    face_minus: np.ndarray
    face_plus: np.ndarray
    face_normal: np.ndarray
    face_center: np.ndarray
    face_measure: np.ndarray
    face_boundary: np.ndarray
    face_label: list = field(repr=False, default_factory=list)
    element_faces: np.ndarray = None
    element_sign: np.ndarray = None  # +1 where the element is the minus side

    @property
    def n_elements(self) -> int:
        return len(self.cell_of_element)

    @property
    def n_faces(self) -> int:
        return len(self.face_minus)

    @property
    def dx(self) -> float:
        return (self.x_range[1] - self.x_range[0]) / self.nx

    @property
    def dz(self) -> float:
        if self.dimension == 1:
            raise AttributeError("1D mesh has no dz")
        return (self.z_range[1] - self.z_range[0]) / self.nz

    @property
    def cell_volume(self) -> float:
        return self.dx if self.dimension == 1 else self.dx * self.dz

    def element_centers(self) -> np.ndarray:
        """Centers of the fluid elements, shape (n_elements, dimension)."""
        if self.dimension == 1:
            i = self.cell_of_element
            x = self.x_range[0] + (i + 0.5) * self.dx
            return x[:, None]
        i = self.cell_of_element % self.nx
        j = self.cell_of_element // self.nx
        x = self.x_range[0] + (i + 0.5) * self.dx
        z = self.z_range[0] + (j + 0.5) * self.dz
        return np.column_stack([x, z])

    def element_cell_ij(self) -> tuple[np.ndarray, np.ndarray]:
        """(i, j) grid indices of each fluid element (j all zero in 1D)."""
        if self.dimension == 1:
            return self.cell_of_element.copy(), np.zeros_like(self.cell_of_element)
        return self.cell_of_element % self.nx, self.cell_of_element // self.nx

    def fluid_area(self) -> float:
        return self.cell_volume * self.n_elements


def build_interval_mesh(a: float, b: float, n_elements: int) -> MeshTopology:
    """Uniform mesh of ``n_elements`` intervals on (a, b).

    Faces are the n_elements + 1 interval endpoints; the two outermost are
    boundary faces labelled "left" and "right".
    """
    if n_elements < 1:
        raise ValueError(f"n_elements must be >= 1, got {n_elements}")
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")

    n = int(n_elements)
    dx = (b - a) / n
    nodes = a + dx * np.arange(n + 1)

    minus = np.empty(n + 1, dtype=int)
    plus = np.empty(n + 1, dtype=int)
    normal = np.empty((n + 1, 1))
    labels = [""] * (n + 1)

    # interior nodes: minus = left element, normal +1
    minus[1:n] = np.arange(n - 1)
    plus[1:n] = np.arange(1, n)
    normal[1:n, 0] = 1.0
    # endpoints: single element, outward normal
    minus[0], plus[0], normal[0, 0] = 0, -1, -1.0
    minus[n], plus[n], normal[n, 0] = n - 1, -1, 1.0
    labels[0], labels[n] = LABEL_LEFT, LABEL_RIGHT

    element_faces = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    sign = np.empty((n, 2))
    sign[:, 0] = -1.0  # west face: element is the plus side (normal +1) ...
    sign[:, 1] = 1.0
    sign[0, 0] = 1.0  # ... except at the left boundary

    return MeshTopology(
        dimension=1,
        nx=n,
        nz=0,
        x_range=(float(a), float(b)),
        z_range=(0.0, 0.0),
        fluid=np.ones(n, dtype=bool),
        cell_of_element=np.arange(n),
        element_of_cell=np.arange(n),
        face_minus=minus,
        face_plus=plus,
        face_normal=normal,
        face_center=nodes[:, None],
        face_measure=np.ones(n + 1),
        face_boundary=(plus == -1),
        face_label=labels,
        element_faces=element_faces,
        element_sign=sign,
    )


def build_rect_mesh(x_range, z_range, nx: int, nz: int, mask=None) -> MeshTopology:
    """Uniform nx-by-nz quad mesh on x_range x z_range with an optional mask.

    ``mask(xc, zc)`` marks solid cells by their centers (vectorized over
    arrays).  Solid cells are removed entirely; faces between fluid and solid
    cells become boundary faces labelled "solid".  Raises if the mask removes
    every cell or disconnects the fluid region.
    """
    if nx < 1 or nz < 1:
        raise ValueError(f"need nx, nz >= 1, got {nx}, {nz}")
    x0, x1 = map(float, x_range)
    z0, z1 = map(float, z_range)
    if not (x0 < x1 and z0 < z1):
        raise ValueError("degenerate ranges")

    dx = (x1 - x0) / nx
    dz = (z1 - z0) / nz
    ii, jj = np.meshgrid(np.arange(nx), np.arange(nz), indexing="xy")
    xc = x0 + (ii + 0.5) * dx
    zc = z0 + (jj + 0.5) * dz
    fluid = np.ones((nz, nx), dtype=bool)
    if mask is not None:
        fluid = ~np.asarray(mask(xc, zc), dtype=bool)
    if not fluid.any():
        raise ValueError("mask eliminates all cells")
    _check_connected(fluid)

    element_of_cell = -np.ones(nz * nx, dtype=int)
    cell_of_element = np.flatnonzero(fluid.ravel())
    element_of_cell[cell_of_element] = np.arange(len(cell_of_element))
    elem = element_of_cell.reshape(nz, nx)

    minus, plus, normals, centers, measures, labels = [], [], [], [], [], []
    # elements x faces: west, east, south, north
    ef = -np.ones((len(cell_of_element), 4), dtype=int)
    sign = np.zeros((len(cell_of_element), 4))

    def add_face(mi, pl, nvec, center, measure, label):
        minus.append(mi)
        plus.append(pl)
        normals.append(nvec)
        centers.append(center)
        measures.append(measure)
        labels.append(label)
        return len(minus) - 1

    # x-normal faces: interface column i_f in 0..nx, row j
    for i_f in range(nx + 1):
        for j in range(nz):
            left = elem[j, i_f - 1] if i_f > 0 else -1
            right = elem[j, i_f] if i_f < nx else -1
            if left < 0 and right < 0:
                continue
            center = (x0 + i_f * dx, z0 + (j + 0.5) * dz)
            if left >= 0 and right >= 0:
                f = add_face(left, right, (1.0, 0.0), center, dz, "")
                ef[left, 1] = f
                sign[left, 1] = 1.0
                ef[right, 0] = f
                sign[right, 0] = -1.0
            elif left >= 0:
                lab = LABEL_RIGHT if i_f == nx else LABEL_SOLID
                f = add_face(left, -1, (1.0, 0.0), center, dz, lab)
                ef[left, 1] = f
                sign[left, 1] = 1.0
            else:
                lab = LABEL_LEFT if i_f == 0 else LABEL_SOLID
                f = add_face(right, -1, (-1.0, 0.0), center, dz, lab)
                ef[right, 0] = f
                sign[right, 0] = 1.0

    # z-normal faces: interface row j_f in 0..nz, column i
    for j_f in range(nz + 1):
        for i in range(nx):
            below = elem[j_f - 1, i] if j_f > 0 else -1
            above = elem[j_f, i] if j_f < nz else -1
            if below < 0 and above < 0:
                continue
            center = (x0 + (i + 0.5) * dx, z0 + j_f * dz)
            if below >= 0 and above >= 0:
                f = add_face(below, above, (0.0, 1.0), center, dx, "")
                ef[below, 3] = f
                sign[below, 3] = 1.0
                ef[above, 2] = f
                sign[above, 2] = -1.0
            elif below >= 0:
                lab = LABEL_TOP if j_f == nz else LABEL_SOLID
                f = add_face(below, -1, (0.0, 1.0), center, dx, lab)
                ef[below, 3] = f
                sign[below, 3] = 1.0
            else:
                lab = LABEL_BOTTOM if j_f == 0 else LABEL_SOLID
                f = add_face(above, -1, (0.0, -1.0), center, dx, lab)
                ef[above, 2] = f
                sign[above, 2] = 1.0

    plus = np.asarray(plus, dtype=int)
    return MeshTopology(
        dimension=2,
        nx=nx,
        nz=nz,
        x_range=(x0, x1),
        z_range=(z0, z1),
        fluid=fluid,
        cell_of_element=cell_of_element,
        element_of_cell=element_of_cell,
        face_minus=np.asarray(minus, dtype=int),
        face_plus=plus,
        face_normal=np.asarray(normals, dtype=float),
        face_center=np.asarray(centers, dtype=float),
        face_measure=np.asarray(measures, dtype=float),
        face_boundary=(plus == -1),
        face_label=labels,
        element_faces=ef,
        element_sign=sign,
    )


def face_neighbors(mesh: MeshTopology, face_id: int):
    """Return (minus_element, plus_element_or_None, normal) for a face."""
    if not 0 <= face_id < mesh.n_faces:
        raise IndexError(f"face id {face_id} out of range (n_faces={mesh.n_faces})")
    plus = int(mesh.face_plus[face_id])
    return (
        int(mesh.face_minus[face_id]),
        None if plus < 0 else plus,
        mesh.face_normal[face_id].copy(),
    )


def _check_connected(fluid: np.ndarray) -> None:
    """Flood-fill check that the fluid cells form one 4-connected region."""
    nz, nx = fluid.shape
    seen = np.zeros_like(fluid)
    start = np.argwhere(fluid)[0]
    stack = [tuple(start)]
    seen[tuple(start)] = True
    while stack:
        j, i = stack.pop()
        for dj, di in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            jn, in_ = j + dj, i + di
            if 0 <= jn < nz and 0 <= in_ < nx and fluid[jn, in_] and not seen[jn, in_]:
                seen[jn, in_] = True
                stack.append((jn, in_))
    if seen.sum() != fluid.sum():
        raise ValueError(
            f"mask disconnects the fluid region: {int(fluid.sum() - seen.sum())} "
            "cells unreachable from the first fluid cell"
        )
