"""Nodal polynomial bases on [-1, 1] and [-1, 1]^2 with Gauss quadrature.

Node placement is equispaced for degree <= 2 (the degree-2 set {-1, 0, 1}
gives the classical quadratic shape functions (s^2 - s)/2, 1 - s^2,
(s^2 + s)/2) and Gauss-Lobatto for higher degrees, where equispaced nodes
start to condition badly.  2D bases are tensor products, flat index
k = j * (p + 1) + i with i running along the first coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre points and weights on the reference domain."""

    points: np.ndarray  # (nq,) in 1D, (nq, 2) on the square
    weights: np.ndarray
    dimension: int


@dataclass(frozen=True)
class ElementBasis:
    """Lagrange basis on the reference interval or square.

    ``nodes_1d`` is the per-direction node set; ``nodes`` lists the node
    coordinates of all ``cardinality`` basis functions.
    """

    degree: int
    dimension: int
    nodes_1d: np.ndarray
    nodes: np.ndarray
    cardinality: int

    def values(self, points) -> np.ndarray:
        """Basis values, shape (n_points, cardinality)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float).reshape(-1, self.dimension))
        if self.dimension == 1:
            return _lagrange_values(self.nodes_1d, pts[:, 0])
        vx = _lagrange_values(self.nodes_1d, pts[:, 0])
        vz = _lagrange_values(self.nodes_1d, pts[:, 1])
        return (vz[:, :, None] * vx[:, None, :]).reshape(len(pts), -1)

    def gradients(self, points) -> np.ndarray:
        """Reference-coordinate gradients, shape (n_points, cardinality, dim)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float).reshape(-1, self.dimension))
        if self.dimension == 1:
            return _lagrange_derivs(self.nodes_1d, pts[:, 0])[:, :, None]
        vx = _lagrange_values(self.nodes_1d, pts[:, 0])
        vz = _lagrange_values(self.nodes_1d, pts[:, 1])
        dx = _lagrange_derivs(self.nodes_1d, pts[:, 0])
        dz = _lagrange_derivs(self.nodes_1d, pts[:, 1])
        gx = (vz[:, :, None] * dx[:, None, :]).reshape(len(pts), -1)
        gz = (dz[:, :, None] * vx[:, None, :]).reshape(len(pts), -1)
        return np.stack([gx, gz], axis=-1)


def nodal_nodes_1d(p: int) -> np.ndarray:
    """Node set on [-1, 1]: equispaced for p <= 2, Gauss-Lobatto above."""
    if p < 1:
        raise ValueError(f"degree must be >= 1, got {p}")
    if p <= 2:
        return np.linspace(-1.0, 1.0, p + 1)
    # Lobatto nodes: endpoints plus the roots of P_p'
    coeffs = np.zeros(p + 1)
    coeffs[p] = 1.0
    interior = legendre.legroots(legendre.legder(coeffs))
    return np.concatenate([[-1.0], np.sort(interior), [1.0]])


def nodal_basis_1d(p: int) -> ElementBasis:
    nodes = nodal_nodes_1d(p)
    return ElementBasis(
        degree=p, dimension=1, nodes_1d=nodes, nodes=nodes[:, None], cardinality=p + 1
    )


def nodal_basis_2d(p: int) -> ElementBasis:
    nodes = nodal_nodes_1d(p)
    gx, gz = np.meshgrid(nodes, nodes, indexing="xy")
    coords = np.column_stack([gx.ravel(), gz.ravel()])
    return ElementBasis(
        degree=p,
        dimension=2,
        nodes_1d=nodes,
        nodes=coords,
        cardinality=(p + 1) ** 2,
    )


def gauss_rule(n_points: int, dimension: int) -> QuadratureRule:
    """Gauss-Legendre rule, tensorized on the square for dimension 2."""
    if n_points < 1:
        raise ValueError(f"n_points must be >= 1, got {n_points}")
    x, w = legendre.leggauss(n_points)
    if dimension == 1:
        return QuadratureRule(points=x, weights=w, dimension=1)
    if dimension == 2:
        gx, gz = np.meshgrid(x, x, indexing="xy")
        wx, wz = np.meshgrid(w, w, indexing="xy")
        return QuadratureRule(
            points=np.column_stack([gx.ravel(), gz.ravel()]),
            weights=(wx * wz).ravel(),
            dimension=2,
        )
    raise ValueError(f"dimension must be 1 or 2, got {dimension}")


def _lagrange_values(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Values of the Lagrange cardinal functions, shape (len(x), len(nodes))."""
    x = np.asarray(x, dtype=float)
    n = len(nodes)
    out = np.ones((len(x), n))
    for i in range(n):
        for j in range(n):
            if j != i:
                out[:, i] *= (x - nodes[j]) / (nodes[i] - nodes[j])
    return out


def _lagrange_derivs(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """First derivatives of the Lagrange cardinal functions."""
    x = np.asarray(x, dtype=float)
    n = len(nodes)
    out = np.zeros((len(x), n))
    for i in range(n):
        for k in range(n):
            if k == i:
                continue
            term = np.ones_like(x) / (nodes[i] - nodes[k])
            for j in range(n):
                if j != i and j != k:
                    term *= (x - nodes[j]) / (nodes[i] - nodes[j])
            out[:, i] += term
    return out
