"""Hybridized DG solver for diffusion-advection-reaction problems.

Every element carries a full first-order unknown u = (z, p) (flux components
plus scalar) expanded in a nodal basis.  Faces carry two reduced trace
fields: the normal-flux trace mu = n . z_hat and the scalar trace p_hat; the
full face state is u_hat = (n1 mu, n2 mu, p_hat) with n the stored face
normal, which spans exactly the range of the upwind matrix |A| (the
tangential flux component is invisible to the scheme and is not carried).

Element unknowns are eliminated per element (static condensation), leaving a
sparse system on the skeleton that couples each face to the other faces of
its incident elements.  The discrete equations are, with W the one-sided
outgoing-characteristic moment  W u = <p + n_out . z, w>_face:

* interior faces:   2 M mu    = sum over sides of  s  W u
                    2 M p_hat = sum over sides of     W u
  (s = +1 from the minus side, -1 from the plus side), which is the weak
  jump condition of the hybridized upwind flux;
* Dirichlet faces:  M p_hat = <g, w>  and the outgoing-characteristic row
                    M (mu + p_hat) = W u;
* Neumann faces:    M mu = <q_n, w>  and  M (p_hat + mu) = W u.

The boundary rows are the Godunov flux evaluated against the reflected
exterior state, which keeps the scheme consistent for inhomogeneous data.

Variable coefficients are either sampled at quadrature points
(``sampling="quadrature"``) or frozen at the element midpoint
(``sampling="midpoint"``).  The benchmark error tables bundled with the CLI
correspond to the midpoint convention.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .basis import ElementBasis, gauss_rule, nodal_basis_1d, nodal_basis_2d
from .fluxops import (
    DIRICHLET,
    CoefficientField,
    direction_matrices,
    dirichlet,
    face_matrices,
    neumann,
)
from .mesh import MeshTopology

SAMPLING_QUADRATURE = "quadrature"
SAMPLING_MIDPOINT = "midpoint"


class SingularLocalSystemError(RuntimeError):
    """A per-element system could not be factorized."""


class SingularTraceError(RuntimeError):
    """The skeleton matrix is numerically singular (e.g. true resonance)."""


# ---------------------------------------------------------------------------
# reference tensors and batched element operators


class _Operators:
    """Cached reference tensors plus batched per-element matrices."""

    def __init__(self, mesh: MeshTopology, coeffs: CoefficientField, degree: int,
                 sampling: str = SAMPLING_QUADRATURE):
        if degree < 1:
            raise ValueError(f"degree must be >= 1, got {degree}")
        if sampling not in (SAMPLING_QUADRATURE, SAMPLING_MIDPOINT):
            raise ValueError(f"unknown sampling mode {sampling!r}")
        if coeffs.dimension != mesh.dimension:
            raise ValueError("coefficient field dimension does not match the mesh")
        self.mesh = mesh
        self.coeffs = coeffs
        self.degree = degree
        self.sampling = sampling
        self.dim = mesh.dimension
        self.m = self.dim + 1

        self.basis: ElementBasis = (
            nodal_basis_1d(degree) if self.dim == 1 else nodal_basis_2d(degree)
        )
        self.P = self.basis.cardinality
        self.q_face = 1 if self.dim == 1 else degree + 1
        self.n_local_faces = 2 * self.dim
        self.face_basis = None if self.dim == 1 else nodal_basis_1d(degree)

        self._build_reference()
        self._build_element_systems()

    # -- reference element ----------------------------------------------

    def _build_reference(self):
        mesh, dim, P = self.mesh, self.dim, self.P
        quad = gauss_rule(self.degree + 1, dim)
        self.quad = quad
        half = np.array([mesh.dx / 2.0] if dim == 1 else [mesh.dx / 2.0, mesh.dz / 2.0])
        jac = float(np.prod(half))

        pts = quad.points.reshape(-1, dim)
        self.phi = self.basis.values(pts)  # (nq, P)
        grad_ref = self.basis.gradients(pts)  # (nq, P, dim)
        self.dphi = grad_ref / half  # physical derivatives
        self.wvol = quad.weights * jac
        self.quad_ref = pts
        # center evaluation for midpoint sampling / solution probing
        self.phi_center = self.basis.values(np.zeros((1, dim)))[0]

        # first-order stiffness S_d[a, k] = int phi_k d(phi_a)/dx_d
        self.S = [
            np.einsum("q,qk,qa->ak", self.wvol, self.phi, self.dphi[:, :, d])
            for d in range(dim)
        ]
        self.mass_vol = np.einsum("q,qa,qk->ak", self.wvol, self.phi, self.phi)

        # local faces: outward normals and reference geometry
        if dim == 1:
            normals = [(-1.0,), (1.0,)]
        else:
            normals = [(-1.0, 0.0), (1.0, 0.0), (0.0, -1.0), (0.0, 1.0)]
        self.local_normals = [np.array(n) for n in normals]

        self.G = []  # (P, q) moments int M_b phi_a per local face
        self.T = []  # (P, P) face mass in the volume basis
        self.Mface = []  # (q, q) face mass in the face basis
        self.mweights = []  # (q,) int M_b, for piecewise-constant data
        self.face_quad_ref = []  # (nqf, dim) reference coords of face points
        self.face_wj = []  # (nqf,) weight * face jacobian
        self.face_MF = []  # (nqf, q)
        if dim == 1:
            for lf, xi in enumerate((-1.0, 1.0)):
                pf = np.array([[xi]])
                phif = self.basis.values(pf)  # (1, P)
                self.face_quad_ref.append(pf)
                self.face_wj.append(np.ones(1))
                self.face_MF.append(np.ones((1, 1)))
                self.G.append(phif.T.copy())  # (P, 1)
                self.T.append(phif.T @ phif)
                self.Mface.append(np.ones((1, 1)))
                self.mweights.append(np.ones(1))
        else:
            fquad = gauss_rule(self.degree + 1, 1)
            mf = self.face_basis.values(fquad.points[:, None])  # (nqf, q)
            for lf in range(4):
                s = fquad.points
                if lf in (0, 1):  # west/east: parameter runs along z
                    xi = np.full_like(s, -1.0 if lf == 0 else 1.0)
                    pf = np.column_stack([xi, s])
                    jf = mesh.dz / 2.0
                else:  # south/north: parameter runs along x
                    ze = np.full_like(s, -1.0 if lf == 2 else 1.0)
                    pf = np.column_stack([s, ze])
                    jf = mesh.dx / 2.0
                wj = fquad.weights * jf
                phif = self.basis.values(pf)  # (nqf, P)
                self.face_quad_ref.append(pf)
                self.face_wj.append(wj)
                self.face_MF.append(mf)
                self.G.append(np.einsum("r,rb,ra->ab", wj, mf, phif))
                self.T.append(np.einsum("r,ra,rk->ak", wj, phif, phif))
                self.Mface.append(np.einsum("r,rb,rc->bc", wj, mf, mf))
                self.mweights.append(np.einsum("r,rb->b", wj, mf))

        # trace coupling C = [s*Cmu | Cp] and extraction W per local face
        d, m, P, q = self.dim, self.m, self.P, self.q_face
        self.Cmu = []
        self.Cp = []
        self.W = []
        for lf in range(self.n_local_faces):
            n_loc = self.local_normals[lf]
            G = self.G[lf]
            cmu = np.zeros((m * P, q))
            cp = np.zeros((m * P, q))
            w = np.zeros((q, m * P))
            for c in range(d):
                cmu[c * P:(c + 1) * P, :] = n_loc[c] * G
                w[:, c * P:(c + 1) * P] = n_loc[c] * G.T
            cp[d * P:(d + 1) * P, :] = G
            w[:, d * P:(d + 1) * P] = G.T
            self.Cmu.append(cmu)
            self.Cp.append(cp)
            self.W.append(w)

        # constant part of the local matrix: volume flux + one-sided face flux
        L0 = np.zeros((m * P, m * P))
        for dmat, S in zip(direction_matrices(dim), self.S):
            for i in range(m):
                for c in range(m):
                    if dmat[i, c] != 0.0:
                        L0[i * P:(i + 1) * P, c * P:(c + 1) * P] -= dmat[i, c] * S
        for lf in range(self.n_local_faces):
            fm = face_matrices(self.local_normals[lf], dim)
            A_up = fm.jacobian + fm.upwind
            for i in range(m):
                for c in range(m):
                    if A_up[i, c] != 0.0:
                        L0[i * P:(i + 1) * P, c * P:(c + 1) * P] += A_up[i, c] * self.T[lf]
        self.L0 = L0

    # -- element systems ---------------------------------------------------

    def _quad_coords(self):
        centers = self.mesh.element_centers()  # (ne, dim)
        half = np.array(
            [self.mesh.dx / 2.0]
            if self.dim == 1
            else [self.mesh.dx / 2.0, self.mesh.dz / 2.0]
        )
        return centers[:, None, :] + self.quad_ref[None, :, :] * half  # (ne, nq, dim)

    def _build_element_systems(self):
        mesh, d, m, P = self.mesh, self.dim, self.m, self.P
        ne = mesh.n_elements
        coeffs = self.coeffs

        if self.sampling == SAMPLING_MIDPOINT:
            pts = mesh.element_centers()[:, None, :]  # (ne, 1, dim)
        else:
            pts = self._quad_coords()
        crd = tuple(pts[:, :, a] for a in range(d))
        ks = [np.broadcast_to(np.asarray(k(*crd), dtype=float), pts.shape[:2])
              for k in coeffs.diffusion]
        for axis, k in enumerate(ks):
            if np.any(k <= 0.0):
                e = int(np.argwhere(k <= 0.0)[0][0])
                raise ValueError(f"nonpositive diffusion k{axis + 1} in element {e}")
        betas = [np.broadcast_to(np.asarray(b(*crd), dtype=float), pts.shape[:2])
                 for b in coeffs.advection]
        creac = np.broadcast_to(np.asarray(coeffs.reaction(*crd), dtype=float),
                                pts.shape[:2])
        fsrc = np.broadcast_to(np.asarray(coeffs.source(*crd), dtype=float),
                               pts.shape[:2])

        L = np.broadcast_to(self.L0, (ne, m * P, m * P)).copy()

        def add_block(i, c, vals):
            # vals: (ne, nq') coefficient samples for block (i, c)
            if self.sampling == SAMPLING_MIDPOINT:
                L[:, i * P:(i + 1) * P, c * P:(c + 1) * P] += (
                    vals[:, 0, None, None] * self.mass_vol
                )
            else:
                phiw = self.wvol[:, None] * self.phi
                L[:, i * P:(i + 1) * P, c * P:(c + 1) * P] += np.einsum(
                    "eq,qa,qk->eak", vals, phiw, self.phi
                )

        for axis in range(d):
            add_block(axis, axis, 1.0 / ks[axis])
            add_block(d, axis, -betas[axis] / ks[axis])
        add_block(d, d, creac)

        b = np.zeros((ne, m * P))
        if self.sampling == SAMPLING_MIDPOINT:
            wvec = np.einsum("q,qa->a", self.wvol, self.phi)
            b[:, d * P:(d + 1) * P] = fsrc[:, 0, None] * wvec
        else:
            b[:, d * P:(d + 1) * P] = np.einsum("eq,q,qa->ea", fsrc, self.wvol, self.phi)

        self.L = L
        self.b = b
        try:
            self.Linv = np.linalg.inv(L)
        except np.linalg.LinAlgError:
            for e in range(ne):
                try:
                    np.linalg.inv(L[e])
                except np.linalg.LinAlgError:
                    raise SingularLocalSystemError(
                        f"local system of element {e} is singular"
                    ) from None
            raise
        bad = ~np.isfinite(self.Linv).all(axis=(1, 2))
        if bad.any():
            raise SingularLocalSystemError(
                f"local system of element {int(np.argwhere(bad)[0][0])} is singular"
            )

        # Linv applied to the couplings and the source, per local face
        self.Xmu = [self.Linv @ self.Cmu[lf] for lf in range(self.n_local_faces)]
        self.Xp = [self.Linv @ self.Cp[lf] for lf in range(self.n_local_faces)]
        self.y = np.einsum("eij,ej->ei", self.Linv, b)


# ---------------------------------------------------------------------------
# public data carriers


@dataclass
class LocalSystem:
    """Discrete system of one element: L u = rhs + sum_f coupling_f u_hat_f."""

    element: int
    faces: np.ndarray  # global face ids of the element
    signs: np.ndarray  # +1 where the element is the face's minus side
    matrix: np.ndarray  # (m P, m P)
    rhs: np.ndarray  # (m P,)
    couplings: list  # per local face, (m P, 2 q), columns [mu | p_hat]
    extractions: list  # per local face, W: (q, m P)
    q_face: int

    def solve(self, trace_values: list) -> np.ndarray:
        """Element unknowns for given per-face trace dofs [mu, p_hat]."""
        rhs = self.rhs.copy()
        for C, uh in zip(self.couplings, trace_values):
            rhs += C @ uh
        return np.linalg.solve(self.matrix, rhs)


@dataclass
class CondensedElement:
    """Schur pieces of one element on its faces.

    ``blocks[(r, c)]`` maps the trace dofs of local face c into the stacked
    [mu-rows; p_hat-rows] moments of local face r after eliminating the
    element unknowns; ``vectors[r]`` is the matching source moment.
    """

    element: int
    faces: np.ndarray
    signs: np.ndarray
    blocks: dict
    vectors: dict
    q_face: int


@dataclass
class TraceSystem:
    """Sparse skeleton system in the reduced trace unknowns."""

    matrix: sparse.csc_matrix
    rhs: np.ndarray
    n_dofs: int
    q_face: int
    face_kind: np.ndarray  # 0 interior, 1 dirichlet, 2 neumann
    mesh: MeshTopology = field(repr=False, default=None)
    _ops: _Operators = field(repr=False, default=None)

    def face_slice(self, face_id: int) -> slice:
        return slice(2 * self.q_face * face_id, 2 * self.q_face * (face_id + 1))


@dataclass
class TraceSolution:
    values: np.ndarray
    residual: float
    pivot_ratio: float
    refinements: int

    def face_values(self, system: TraceSystem, face_id: int):
        """(mu, p_hat) dof vectors of one face."""
        q = system.q_face
        sl = system.face_slice(face_id)
        v = self.values[sl]
        return v[:q], v[q:]


@dataclass
class ElementSolution:
    """Per-element coefficients of all components of u = (z, p)."""

    mesh: MeshTopology = field(repr=False)
    degree: int
    basis: ElementBasis = field(repr=False)
    coefficients: np.ndarray  # (n_elements, m, P)

    @property
    def n_components(self) -> int:
        return self.coefficients.shape[1]

    @property
    def value_component(self) -> int:
        return self.mesh.dimension

    def at_centers(self) -> np.ndarray:
        """All components at the element centers, shape (n_elements, m)."""
        phi0 = self.basis.values(np.zeros((1, self.mesh.dimension)))[0]
        return np.einsum("emk,k->em", self.coefficients, phi0)

    def values_at_centers(self) -> np.ndarray:
        return self.at_centers()[:, self.value_component]

    def evaluate(self, points, component=None) -> np.ndarray:
        """Evaluate one component (default: the scalar) at physical points."""
        mesh = self.mesh
        comp = self.value_component if component is None else component
        pts = np.atleast_2d(np.asarray(points, dtype=float).reshape(-1, mesh.dimension))
        i = np.clip(((pts[:, 0] - mesh.x_range[0]) / mesh.dx).astype(int), 0, mesh.nx - 1)
        if mesh.dimension == 1:
            cells = i
            xc = mesh.x_range[0] + (i + 0.5) * mesh.dx
            ref = (pts[:, 0] - xc)[:, None] * (2.0 / mesh.dx)
        else:
            j = np.clip(((pts[:, 1] - mesh.z_range[0]) / mesh.dz).astype(int),
                        0, mesh.nz - 1)
            cells = j * mesh.nx + i
            xc = mesh.x_range[0] + (i + 0.5) * mesh.dx
            zc = mesh.z_range[0] + (j + 0.5) * mesh.dz
            ref = np.column_stack(
                [(pts[:, 0] - xc) * (2.0 / mesh.dx), (pts[:, 1] - zc) * (2.0 / mesh.dz)]
            )
        elems = mesh.element_of_cell[cells]
        if np.any(elems < 0):
            bad = pts[elems < 0][0]
            raise ValueError(f"point {tuple(bad)} lies in a solid cell")
        vals = self.basis.values(ref)  # (np, P)
        return np.einsum("pk,pk->p", self.coefficients[elems, comp], vals)


# ---------------------------------------------------------------------------
# assembly and solve


def _face_kinds(mesh: MeshTopology, coeffs: CoefficientField) -> np.ndarray:
    kinds = np.zeros(mesh.n_faces, dtype=int)
    for f in range(mesh.n_faces):
        if mesh.face_boundary[f]:
            bc = coeffs.boundary_condition(mesh.face_label[f])
            kinds[f] = 1 if bc.kind == DIRICHLET else 2
    return kinds


def assemble_local(mesh: MeshTopology, coeffs: CoefficientField, degree: int,
                   element: int, sampling: str = SAMPLING_QUADRATURE,
                   _ops: _Operators = None) -> LocalSystem:
    """Local matrix, source and face couplings of one element."""
    ops = _ops if _ops is not None else _Operators(mesh, coeffs, degree, sampling)
    e = int(element)
    if not 0 <= e < mesh.n_elements:
        raise IndexError(f"element {element} out of range")
    signs = mesh.element_sign[e]
    couplings = [
        np.hstack([signs[lf] * ops.Cmu[lf], ops.Cp[lf]])
        for lf in range(ops.n_local_faces)
    ]
    return LocalSystem(
        element=e,
        faces=mesh.element_faces[e].copy(),
        signs=signs.copy(),
        matrix=ops.L[e].copy(),
        rhs=ops.b[e].copy(),
        couplings=couplings,
        extractions=[w.copy() for w in ops.W],
        q_face=ops.q_face,
    )


def condense(local: LocalSystem) -> CondensedElement:
    """Schur blocks of one element: trace-to-trace maps after elimination."""
    try:
        Linv = np.linalg.inv(local.matrix)
    except np.linalg.LinAlgError:
        raise SingularLocalSystemError(
            f"local system of element {local.element} is singular"
        ) from None
    nlf = len(local.faces)
    blocks, vectors = {}, {}
    for r in range(nlf):
        E = np.vstack([local.signs[r] * local.extractions[r], local.extractions[r]])
        ELinv = E @ Linv
        vectors[r] = ELinv @ local.rhs
        for c in range(nlf):
            blocks[(r, c)] = ELinv @ local.couplings[c]
    return CondensedElement(
        element=local.element,
        faces=local.faces.copy(),
        signs=local.signs.copy(),
        blocks=blocks,
        vectors=vectors,
        q_face=local.q_face,
    )


def assemble_trace_system(mesh: MeshTopology, coeffs: CoefficientField, degree: int,
                          sampling: str = SAMPLING_QUADRATURE) -> TraceSystem:
    """Condense all elements and assemble the skeleton matrix and RHS."""
    ops = _Operators(mesh, coeffs, degree, sampling)
    q = ops.q_face
    nlf = ops.n_local_faces
    ne = mesh.n_elements
    n_dofs = 2 * q * mesh.n_faces
    kinds = _face_kinds(mesh, coeffs)

    gf = mesh.element_faces  # (ne, nlf)
    sg = mesh.element_sign  # (ne, nlf)
    fkind = kinds[gf]  # (ne, nlf)

    # row coefficients per field: interior (s, 1); dirichlet (1, 0); neumann (0, 1)
    rc_mu = np.where(fkind == 0, sg, np.where(fkind == 1, 1.0, 0.0))
    rc_p = np.where(fkind == 2, 1.0, np.where(fkind == 0, 1.0, 0.0))

    rows_list, cols_list, data_list = [], [], []
    rhs = np.zeros(n_dofs)
    offs = 2 * q * gf  # (ne, nlf) dof offsets

    dof_mu = np.arange(q)
    dof_p = q + np.arange(q)
    for r in range(nlf):
        Wy = np.einsum("bp,ep->eb", ops.W[r], ops.y)  # (ne, q)
        np.add.at(rhs, offs[:, r][:, None] + dof_mu[None, :], rc_mu[:, r, None] * Wy)
        np.add.at(rhs, offs[:, r][:, None] + dof_p[None, :], rc_p[:, r, None] * Wy)
        for c in range(nlf):
            WXmu = np.einsum("bp,epq->ebq", ops.W[r], ops.Xmu[c])  # (ne, q, q)
            WXp = np.einsum("bp,epq->ebq", ops.W[r], ops.Xp[c])
            cs = sg[:, c]  # column sign on mu columns
            blk = np.empty((ne, 2 * q, 2 * q))
            blk[:, :q, :q] = -(rc_mu[:, r] * cs)[:, None, None] * WXmu
            blk[:, :q, q:] = -rc_mu[:, r][:, None, None] * WXp
            blk[:, q:, :q] = -(rc_p[:, r] * cs)[:, None, None] * WXmu
            blk[:, q:, q:] = -rc_p[:, r][:, None, None] * WXp
            rr = offs[:, r][:, None, None] + np.arange(2 * q)[None, :, None]
            cc = offs[:, c][:, None, None] + np.arange(2 * q)[None, None, :]
            rows_list.append(np.broadcast_to(rr, blk.shape).ravel())
            cols_list.append(np.broadcast_to(cc, blk.shape).ravel())
            data_list.append(blk.ravel())

    # face mass blocks and boundary data
    orientation = np.argmax(np.abs(mesh.face_normal), axis=1)
    lf_of_orientation = (0, 2)  # any local face of that orientation
    for f in range(mesh.n_faces):
        lf = lf_of_orientation[orientation[f]] if mesh.dimension == 2 else 0
        M = ops.Mface[lf]
        base = 2 * q * f
        if kinds[f] == 0:
            patt = [(dof_mu, dof_mu, 2 * M), (dof_p, dof_p, 2 * M)]
        elif kinds[f] == 1:
            patt = [(dof_p, dof_p, M), (dof_mu, dof_mu, M), (dof_mu, dof_p, M)]
        else:
            patt = [(dof_mu, dof_mu, M), (dof_p, dof_p, M), (dof_p, dof_mu, M)]
        for ri, ci, Mat in patt:
            rr, cc = np.meshgrid(base + ri, base + ci, indexing="ij")
            rows_list.append(rr.ravel())
            cols_list.append(cc.ravel())
            data_list.append(Mat.ravel())
        if kinds[f] != 0:
            bc = coeffs.boundary_condition(mesh.face_label[f])
            proj = _project_face_data(ops, mesh, f, lf, bc.value)
            rhs[base + (dof_p if kinds[f] == 1 else dof_mu)] += proj

    mat = sparse.coo_matrix(
        (np.concatenate(data_list), (np.concatenate(rows_list), np.concatenate(cols_list))),
        shape=(n_dofs, n_dofs),
    ).tocsc()
    return TraceSystem(
        matrix=mat, rhs=rhs, n_dofs=n_dofs, q_face=q, face_kind=kinds,
        mesh=mesh, _ops=ops,
    )


def _face_quad_physical(ops: _Operators, mesh: MeshTopology, f: int, lf: int):
    """Physical coordinates of the face quadrature points of face f."""
    center = mesh.face_center[f]
    if mesh.dimension == 1:
        return (center[:1],)
    ref = ops.face_quad_ref[lf]
    if lf in (0, 1):
        z = center[1] + ref[:, 1] * (mesh.dz / 2.0)
        x = np.full_like(z, center[0])
    else:
        x = center[0] + ref[:, 0] * (mesh.dx / 2.0)
        z = np.full_like(x, center[1])
    return x, z


def _project_face_data(ops, mesh, f, lf, value_fn):
    coords = _face_quad_physical(ops, mesh, f, lf)
    g = np.asarray(value_fn(*coords), dtype=float)
    g = np.broadcast_to(g, ops.face_wj[lf].shape)
    return np.einsum("r,r,rb->b", ops.face_wj[lf], g, ops.face_MF[lf])


def solve_trace(system: TraceSystem, rtol: float = 1e-10,
                max_refinements: int = 3) -> TraceSolution:
    """Direct sparse solve of the skeleton system with iterative refinement."""
    A, b = system.matrix, system.rhs
    try:
        lu = splu(A)
    except RuntimeError as err:
        raise SingularTraceError(f"skeleton factorization failed: {err}") from None
    udiag = np.abs(lu.U.diagonal())
    pivot_ratio = float(udiag.min() / udiag.max()) if udiag.max() > 0 else 0.0
    x = lu.solve(b)
    bnorm = np.linalg.norm(b)
    refinements = 0
    res = np.linalg.norm(A @ x - b) / max(bnorm, 1e-300)
    while res > rtol and refinements < max_refinements and np.isfinite(res):
        x = x + lu.solve(b - A @ x)
        res = np.linalg.norm(A @ x - b) / max(bnorm, 1e-300)
        refinements += 1
    if not np.isfinite(res) or res > rtol:
        raise SingularTraceError(
            "skeleton system is numerically singular (true resonance?): "
            f"relative residual {res:.3e} after {refinements} refinements, "
            f"smallest pivot ratio {pivot_ratio:.3e}"
        )
    return TraceSolution(values=x, residual=float(res), pivot_ratio=pivot_ratio,
                         refinements=refinements)


def reconstruct(system: TraceSystem, solution: TraceSolution) -> ElementSolution:
    """Back-substitute the trace solution into the per-element systems."""
    ops = system._ops
    mesh = system.mesh
    q = ops.q_face
    u = ops.y.copy()  # (ne, mP)
    offs = 2 * q * mesh.element_faces  # (ne, nlf)
    for lf in range(ops.n_local_faces):
        idx = offs[:, lf]
        uh_mu = solution.values[idx[:, None] + np.arange(q)[None, :]]
        uh_p = solution.values[idx[:, None] + q + np.arange(q)[None, :]]
        uh_mu = uh_mu * mesh.element_sign[:, lf][:, None]
        u += np.einsum("epq,eq->ep", ops.Xmu[lf], uh_mu)
        u += np.einsum("epq,eq->ep", ops.Xp[lf], uh_p)
    coeffs = u.reshape(mesh.n_elements, ops.m, ops.P)
    return ElementSolution(mesh=mesh, degree=ops.degree, basis=ops.basis,
                           coefficients=coeffs)


def element_residual(system: TraceSystem, solution: TraceSolution,
                     element_solution: ElementSolution) -> float:
    """Max relative residual of the local equations at the reconstruction."""
    ops = system._ops
    mesh = system.mesh
    q = ops.q_face
    u = element_solution.coefficients.reshape(mesh.n_elements, -1)
    rhs = ops.b.copy()
    offs = 2 * q * mesh.element_faces
    for lf in range(ops.n_local_faces):
        idx = offs[:, lf]
        uh_mu = solution.values[idx[:, None] + np.arange(q)[None, :]]
        uh_p = solution.values[idx[:, None] + q + np.arange(q)[None, :]]
        uh_mu = uh_mu * mesh.element_sign[:, lf][:, None]
        rhs += np.einsum("pq,eq->ep", ops.Cmu[lf], uh_mu)
        rhs += np.einsum("pq,eq->ep", ops.Cp[lf], uh_p)
    res = np.einsum("eij,ej->ei", ops.L, u) - rhs
    scale = np.maximum(np.linalg.norm(rhs, axis=1), 1e-300)
    return float((np.linalg.norm(res, axis=1) / scale).max())


def solve_elliptic(mesh: MeshTopology, coeffs: CoefficientField, degree: int,
                   sampling: str = SAMPLING_QUADRATURE, rtol: float = 1e-10):
    """Full pipeline: assemble, condense, trace solve, reconstruct.

    Returns (ElementSolution, diagnostics) where diagnostics is a flat dict
    of residuals, sizes and wall times.
    """
    t0 = time.perf_counter()
    system = assemble_trace_system(mesh, coeffs, degree, sampling)
    t1 = time.perf_counter()
    tsol = solve_trace(system, rtol=rtol)
    t2 = time.perf_counter()
    esol = reconstruct(system, tsol)
    t3 = time.perf_counter()
    diagnostics = {
        "n_elements": mesh.n_elements,
        "n_trace_dofs": system.n_dofs,
        "trace_residual": tsol.residual,
        "pivot_ratio": tsol.pivot_ratio,
        "refinements": tsol.refinements,
        "max_element_residual": element_residual(system, tsol, esol),
        "assemble_seconds": t1 - t0,
        "solve_seconds": t2 - t1,
        "reconstruct_seconds": t3 - t2,
        "total_seconds": t3 - t0,
    }
    return esol, diagnostics


# ---------------------------------------------------------------------------
# factorized Poisson operator for repeated projection solves


class FactorizedPoisson:
    """Constant-coefficient Poisson solver reused across time steps.

    Solves  -lap(p) = f  with f constant per cell, Dirichlet data constant
    per face on faces labelled with ``dirichlet_labels`` and zero normal flux
    elsewhere.  The skeleton matrix is factorized once; each call only
    rebuilds the right-hand side.  Returns cell-center values of (z, p) with
    z = -grad p.
    """

    def __init__(self, mesh: MeshTopology, degree: int,
                 dirichlet_labels=("top",)):
        boundary = {lab: dirichlet(0.0) for lab in dirichlet_labels}
        for lab in ("left", "right", "bottom", "top"):
            boundary.setdefault(lab, neumann(0.0))
        coeffs = CoefficientField(
            dimension=mesh.dimension,
            diffusion=(1.0,) * mesh.dimension,
            boundary=boundary,
        )
        self.system = assemble_trace_system(mesh, coeffs, degree,
                                            sampling=SAMPLING_MIDPOINT)
        self.mesh = mesh
        self.ops = self.system._ops
        self.lu = splu(self.system.matrix)
        udiag = np.abs(self.lu.U.diagonal())
        self.pivot_ratio = float(udiag.min() / udiag.max())

        ops = self.ops
        q = ops.q_face
        ne = mesh.n_elements
        d = ops.dim
        # source path: b = f_e * wvec on the scalar rows, y = Linv b
        wvec = np.einsum("q,qa->a", ops.wvol, ops.phi)
        bunit = np.zeros(ops.m * ops.P)
        bunit[d * ops.P:(d + 1) * ops.P] = wvec
        self.y_unit = ops.Linv[0] @ bunit  # identical for all elements
        kinds = self.system.face_kind
        gf = mesh.element_faces
        sg = mesh.element_sign
        fkind = kinds[gf]
        rc_mu = np.where(fkind == 0, sg, np.where(fkind == 1, 1.0, 0.0))
        rc_p = np.where(fkind == 2, 1.0, np.where(fkind == 0, 1.0, 0.0))
        offs = 2 * q * gf
        rows, vals = [], []
        for r in range(ops.n_local_faces):
            wy = ops.W[r] @ self.y_unit  # (q,)
            rows.append((offs[:, r][:, None] + np.arange(q)[None, :]).ravel())
            vals.append((rc_mu[:, r][:, None] * wy[None, :]).ravel())
            rows.append((offs[:, r][:, None] + q + np.arange(q)[None, :]).ravel())
            vals.append((rc_p[:, r][:, None] * wy[None, :]).ravel())
        self._rhs_rows = np.concatenate(rows)
        self._rhs_vals = np.concatenate(vals)
        self._rhs_elem = np.tile(
            np.repeat(np.arange(ne), q), 2 * ops.n_local_faces
        )
        # Dirichlet data path: project face data given at the face
        # quadrature points, proj_b = sum_r w_r g_r M_b(r)
        self.dirichlet_faces = np.flatnonzero(kinds == 1)
        orientation = np.argmax(np.abs(mesh.face_normal), axis=1)
        lf_of_orientation = (0, 2)
        drows, dproj, dquad = [], [], []
        for f in self.dirichlet_faces:
            lf = lf_of_orientation[orientation[f]] if mesh.dimension == 2 else 0
            drows.append(2 * q * f + q + np.arange(q))
            dproj.append(ops.face_wj[lf][:, None] * ops.face_MF[lf])  # (nqf, q)
            dquad.append(np.column_stack(_face_quad_physical(ops, mesh, f, lf)))
        self._dir_rows = (
            np.stack(drows) if len(drows) else np.empty((0, q), int)
        )
        self._dir_proj = (
            np.stack(dproj) if len(dproj) else np.empty((0, 1, q))
        )
        self.dirichlet_quad_points = (
            np.stack(dquad) if len(dquad) else np.empty((0, 1, mesh.dimension))
        )
        self.phi_center = ops.phi_center

    def dirichlet_face_centers(self) -> np.ndarray:
        return self.mesh.face_center[self.dirichlet_faces]

    def solve(self, f_cells: np.ndarray, dirichlet_values: np.ndarray):
        """Solve with per-element source f_cells and per-face Dirichlet data.

        ``dirichlet_values`` is either one value per Dirichlet face (data
        constant on each face) or an (n_faces, n_quad) array of values at
        the face quadrature points (``dirichlet_quad_points``); smooth data
        should use the latter, since per-face constants carry subcell steps
        whose gradients alias onto the grid.  Returns (center_values,
        residual) with one row per fluid element, columns (z..., p).
        """
        ops = self.ops
        mesh = self.mesh
        q = ops.q_face
        f_cells = np.asarray(f_cells, dtype=float)
        rhs = np.zeros(self.system.n_dofs)
        np.add.at(rhs, self._rhs_rows, self._rhs_vals * f_cells[self._rhs_elem])
        if len(self._dir_rows):
            gvals = np.asarray(dirichlet_values, dtype=float)
            if gvals.ndim == 1:
                gvals = gvals[:, None]
            gvals = np.broadcast_to(gvals, self._dir_proj.shape[:2])
            proj = np.einsum("frb,fr->fb", self._dir_proj, gvals)
            np.add.at(rhs, self._dir_rows.ravel(), proj.ravel())
        x = self.lu.solve(rhs)
        res = np.linalg.norm(self.system.matrix @ x - rhs) / max(
            np.linalg.norm(rhs), 1e-300
        )
        if not np.isfinite(res):
            raise SingularTraceError("projection Poisson solve returned non-finite data")

        u = f_cells[:, None] * self.y_unit[None, :]
        offs = 2 * q * mesh.element_faces
        for lf in range(ops.n_local_faces):
            idx = offs[:, lf]
            uh_mu = x[idx[:, None] + np.arange(q)[None, :]]
            uh_p = x[idx[:, None] + q + np.arange(q)[None, :]]
            uh_mu = uh_mu * mesh.element_sign[:, lf][:, None]
            u += uh_mu @ ops.Xmu[lf][0].T + uh_p @ ops.Xp[lf][0].T
        coeffs = u.reshape(mesh.n_elements, ops.m, ops.P)
        centers = np.einsum("emk,k->em", coeffs, self.phi_center)
        return centers, float(res)
