"""First-order system matrices for the diffusion-advection-reaction equation.

The scalar problem  -div(K grad p) + beta . grad p + c p = f  with diagonal
K = diag(k1, k2) is rewritten for the unknown vector u = (z1, z2, p), where
z = -K grad p, as

    d/dx (Ax u) + d/dz (Az u) + B u = (0, 0, f),

with constant Ax, Az and a pointwise matrix B carrying 1/k1, 1/k2, the
advection and the reaction.  On a face with unit normal n the directional
Jacobian A(n) = n1 Ax + n2 Az has eigenvalues {0, +1, -1}; its absolute
value |A| (the upwinding matrix) has the closed form

    |A| = [[n1^2, n1 n2, 0], [n1 n2, n2^2, 0], [0, 0, 1]].

In 1D the unknown is u = (z, p), A(n) = [[0, n], [n, 0]] and |A| = I.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


def _as_fn(value) -> Callable:
    """Wrap constants as coefficient functions of the point coordinates."""
    if callable(value):
        return value
    const = float(value)

    def fn(*coords):
        return np.full_like(np.asarray(coords[0], dtype=float), const)

    return fn


@dataclass
class BoundaryCondition:
    kind: str  # DIRICHLET or NEUMANN
    value: Callable  # boundary data as a function of the face coordinates

    def __post_init__(self):
        if self.kind not in (DIRICHLET, NEUMANN):
            raise ValueError(f"unknown boundary condition kind {self.kind!r}")
        self.value = _as_fn(self.value)


def dirichlet(value) -> BoundaryCondition:
    return BoundaryCondition(DIRICHLET, value)


def neumann(value) -> BoundaryCondition:
    return BoundaryCondition(NEUMANN, value)


@dataclass
class CoefficientField:
    """Coefficients and boundary conditions of one elliptic problem.

    ``diffusion`` holds the diagonal entries (k1,) or (k1, k2); each entry,
    the advection components, the reaction and the source may be constants
    or callables of the coordinates (x,) or (x, z).  ``boundary`` maps mesh
    boundary labels ("left", "right", "bottom", "top", "solid") to boundary
    conditions; faces labelled "solid" default to zero normal flux.
    """

    dimension: int
    diffusion: tuple
    advection: tuple = None
    reaction: object = 0.0
    source: object = 0.0
    boundary: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if len(self.diffusion) != self.dimension:
            raise ValueError("diffusion needs one diagonal entry per dimension")
        if self.advection is None:
            self.advection = (0.0,) * self.dimension
        self.diffusion = tuple(_as_fn(k) for k in self.diffusion)
        self.advection = tuple(_as_fn(b) for b in self.advection)
        self.reaction = _as_fn(self.reaction)
        self.source = _as_fn(self.source)

    def boundary_condition(self, label: str) -> BoundaryCondition:
        if label in self.boundary:
            return self.boundary[label]
        if label == "solid":
            return neumann(0.0)
        raise ValueError(f"no boundary condition for faces labelled {label!r}")


def direction_matrices(dimension: int):
    """The constant flux Jacobians (Ax,) in 1D or (Ax, Az) in 2D."""
    if dimension == 1:
        return (np.array([[0.0, 1.0], [1.0, 0.0]]),)
    ax = np.zeros((3, 3))
    ax[0, 2] = ax[2, 0] = 1.0
    az = np.zeros((3, 3))
    az[1, 2] = az[2, 1] = 1.0
    return ax, az


def _reaction_matrix(coeffs: CoefficientField, coords):
    """B evaluated at points; shape (n_points, m, m)."""
    d = coeffs.dimension
    m = d + 1
    ks = [np.asarray(k(*coords), dtype=float) for k in coeffs.diffusion]
    for axis, k in enumerate(ks):
        if np.any(k <= 0.0):
            raise ValueError(f"diffusion entry k{axis + 1} is not positive")
    betas = [np.asarray(b(*coords), dtype=float) for b in coeffs.advection]
    c = np.asarray(coeffs.reaction(*coords), dtype=float)
    n = np.broadcast(*ks, c).shape
    B = np.zeros(n + (m, m))
    for axis in range(d):
        B[..., axis, axis] = 1.0 / ks[axis]
        B[..., d, axis] = -betas[axis] / ks[axis]
    B[..., d, d] = c
    return B


def system_matrices_1d(coeffs: CoefficientField, point):
    """(Ax, B, f_vector) of the 1D first-order system at one point."""
    if coeffs.dimension != 1:
        raise ValueError("coefficient field is not one dimensional")
    x = np.asarray(point, dtype=float).reshape(())
    (ax,) = direction_matrices(1)
    B = _reaction_matrix(coeffs, (x,))
    fvec = np.array([0.0, float(coeffs.source(x))])
    return ax, np.asarray(B), fvec


def system_matrices_2d(coeffs: CoefficientField, point):
    """(Ax, Az, B, f_vector) of the 2D first-order system at one point."""
    if coeffs.dimension != 2:
        raise ValueError("coefficient field is not two dimensional")
    x, z = (np.asarray(c, dtype=float).reshape(()) for c in point)
    ax, az = direction_matrices(2)
    B = _reaction_matrix(coeffs, (x, z))
    fvec = np.array([0.0, 0.0, float(coeffs.source(x, z))])
    return ax, az, np.asarray(B), fvec


@dataclass(frozen=True)
class FaceMatrixSet:
    """Directional Jacobian A(n), its eigen-factors and upwind matrix |A|."""

    normal: np.ndarray
    jacobian: np.ndarray  # A = n1 Ax + n2 Az
    upwind: np.ndarray  # |A| = R |D| R^-1
    eigenvectors: np.ndarray  # R, columns ordered for eigenvalues (0,) -1, +1
    eigenvalues: np.ndarray  # diagonal of D


def face_matrices(normal, dimension: int) -> FaceMatrixSet:
    """Face matrices for a (normalized) normal vector."""
    n = np.atleast_1d(np.asarray(normal, dtype=float))
    norm = np.linalg.norm(n)
    if norm == 0.0:
        raise ValueError("zero normal vector")
    n = n / norm
    if dimension == 1:
        n1 = n[0]
        A = np.array([[0.0, n1], [n1, 0.0]])
        R = np.array([[n1, n1], [-1.0, 1.0]])
        eigs = np.array([-1.0, 1.0])
        absA = np.eye(2)
    elif dimension == 2:
        n1, n2 = n
        A = np.array([[0.0, 0.0, n1], [0.0, 0.0, n2], [n1, n2, 0.0]])
        R = np.array([[-n2, n1, n1], [n1, n2, n2], [0.0, -1.0, 1.0]])
        eigs = np.array([0.0, -1.0, 1.0])
        absA = np.array(
            [[n1 * n1, n1 * n2, 0.0], [n1 * n2, n2 * n2, 0.0], [0.0, 0.0, 1.0]]
        )
    else:
        raise ValueError("dimension must be 1 or 2")
    return FaceMatrixSet(
        normal=n, jacobian=A, upwind=absA, eigenvectors=R, eigenvalues=eigs
    )
