"""Hybrid High-Order local operators for vector-valued displacements.

Local unknowns of a cell with ``m`` faces are ordered as

    [cell x-comp (nk), cell y-comp (nk), face_0 x (nf), face_0 y (nf), ...]

with ``nk = dim P^k(T)`` and ``nf = k + 1``.  Symmetric tensors are
expanded on ``phi_i E_c`` with ``E_xx, E_yy`` the diagonal unit tensors and
``E_xy = [[0, 1], [1, 0]]``.

Every local operator is translation invariant (bases are centred at the
cell centroid), so congruent cells share one set of matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .basis import (
    CellBasis,
    FaceBasis,
    QuadratureRule,
    cell_quadrature,
    dim_poly,
    face_quadrature,
    mass_matrix,
)
from .mesh import CellGeometry, PolyMesh

SYM_BASIS = np.array(
    [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [1.0, 0.0]]]
)
# E_c : E_d
SYM_GRAM = np.array([1.0, 1.0, 2.0])


@dataclass
class LocalOperators:
    """Operators of one cell, in coordinates relative to the centroid."""

    k: int
    n_faces: int
    nk: int
    nk1: int
    nf: int
    ndof: int
    quad_points: np.ndarray  # (nq, 2) relative to centroid
    quad_weights: np.ndarray
    phi: np.ndarray  # P^k values at quad points (nq, nk)
    dphi: np.ndarray  # (nq, nk, 2)
    mass: np.ndarray  # P^k cell mass (nk, nk)
    mean: np.ndarray  # integrals of P^k basis (nk,)
    G: np.ndarray  # (3 nk, ndof) symmetric gradient coefficients
    R: np.ndarray  # (2 nk1, ndof) displacement reconstruction coefficients
    deltas: list  # per face (2 nf, ndof)
    face_mass: list  # per face (nf, nf)
    face_h: np.ndarray
    stab: np.ndarray  # sum_F h_F^-1 Delta^T M_F Delta
    strain: np.ndarray  # strain seminorm matrix
    strain_factor: np.ndarray  # L with strain = L^T L
    G_norm: np.ndarray  # sum_T ||G v||^2 matrix
    Bp: np.ndarray  # (nk, ndof) coupling form against P^k pressures
    face_quad_points: list  # per face, relative
    face_quad_weights: list
    face_psi: list  # face basis at face quad points (nqf, nf)
    face_phi: list  # cell basis at face quad points (nqf, nk)
    face_normals: np.ndarray


def _local_bases(geo: CellGeometry, k: int, orthonormalize: bool, order: int):
    quad = cell_quadrature(geo, order)
    basis_k = CellBasis(geo.centroid, geo.diameter, k, orthonormalize, quad)
    basis_k1 = CellBasis(geo.centroid, geo.diameter, k + 1, orthonormalize, quad)
    return quad, basis_k, basis_k1


def build_local_operators(
    mesh: PolyMesh, c: int, k: int, orthonormalize=False, order=None
) -> LocalOperators:
    """Assemble G, r, Delta and the auxiliary matrices of cell ``c``."""
    if k < 1:
        raise ValueError("HHO degree k must be >= 1")
    geo = mesh.cell(c)
    order = 2 * k + 2 if order is None else order
    quad, bk, bk1 = _local_bases(geo, k, orthonormalize, order)
    nk, nk1, nf = bk.size, bk1.size, k + 1
    m = geo.n_faces
    nT = 2 * nk
    ndof = nT + 2 * nf * m
    w = quad.weights
    phi = bk.values(quad.points)
    dphi = bk.gradients(quad.points)
    phi1 = bk1.values(quad.points)
    dphi1 = bk1.gradients(quad.points)
    M = mass_matrix(phi, quad)
    mean = w @ phi

    # -- symmetric gradient reconstruction --------------------------------
    MG = sla.block_diag(M, M, 2 * M)
    rhs = np.zeros((3 * nk, ndof))
    wdx = (dphi[:, :, 0] * w[:, None]).T @ phi  # int dx(phi_i) phi_j
    wdy = (dphi[:, :, 1] * w[:, None]).T @ phi
    sx, sy = slice(0, nk), slice(nk, 2 * nk)
    rxx, ryy, rxy = slice(0, nk), slice(nk, 2 * nk), slice(2 * nk, 3 * nk)
    rhs[rxx, sx] -= wdx
    rhs[ryy, sy] -= wdy
    rhs[rxy, sx] -= wdy
    rhs[rxy, sy] -= wdx

    faces_q, faces_psi, faces_phi, faces_phi1, face_mass = [], [], [], [], []
    for j, f in enumerate(geo.faces):
        a, b = mesh.vertices[mesh.faces[f]]
        fq = face_quadrature(a, b, order)
        fb = FaceBasis(a, b, k, orthonormalize, fq if orthonormalize else None)
        psi = fb.values(fq.points)
        faces_q.append(fq)
        faces_psi.append(psi)
        faces_phi.append(bk.values(fq.points))
        faces_phi1.append(bk1.values(fq.points))
        face_mass.append(mass_matrix(psi, fq))

    def face_cols(j, comp):
        start = nT + j * 2 * nf + comp * nf
        return slice(start, start + nf)

    for j in range(m):
        n = geo.face_normals[j]
        fq, psi, ph = faces_q[j], faces_psi[j], faces_phi[j]
        I = (ph * fq.weights[:, None]).T @ psi  # int_F phi_i psi_j
        rhs[rxx, face_cols(j, 0)] += n[0] * I
        rhs[ryy, face_cols(j, 1)] += n[1] * I
        rhs[rxy, face_cols(j, 0)] += n[1] * I
        rhs[rxy, face_cols(j, 1)] += n[0] * I
    G = np.linalg.solve(MG, rhs)

    # -- displacement reconstruction --------------------------------------
    # symmetric gradients of vector P^{k+1} basis functions at quad points
    Es = np.zeros((len(w), 2 * nk1, 2, 2))
    Es[:, :nk1, 0, :] = dphi1
    Es[:, nk1:, 1, :] = dphi1
    Es = 0.5 * (Es + np.swapaxes(Es, 2, 3))
    K = np.einsum("q,qaij,qbij->ab", w, Es, Es)
    # G basis tensors at quad points: (nq, 3 nk, 2, 2)
    Tq = np.einsum("qi,cjk->qcijk", phi, SYM_BASIS).reshape(len(w), 3 * nk, 2, 2)
    rhs_r = np.einsum("q,qaij,qbij->ab", w, Es, Tq) @ G

    # drop constants (rigid translations) and (0, x), whose symmetric
    # gradient duplicates that of (y, 0)
    keep = [a for a in range(2 * nk1) if a not in (0, nk1, nk1 + 1)]
    A = np.zeros((2 * nk1, 2 * nk1))
    B = np.zeros((2 * nk1, ndof))
    A[: len(keep)] = K[keep]
    B[: len(keep)] = rhs_r[keep]
    row = len(keep)
    mean1 = w @ phi1
    for comp in range(2):
        A[row, comp * nk1 : (comp + 1) * nk1] = mean1
        B[row, comp * nk : (comp + 1) * nk] = mean
        row += 1
    # int_T (d1 r2 - d2 r1) = sum_F int_F (n1 vF2 - n2 vF1)
    A[row, nk1:] = w @ dphi1[:, :, 0]
    A[row, :nk1] = -(w @ dphi1[:, :, 1])
    for j in range(m):
        n = geo.face_normals[j]
        ipsi = faces_q[j].weights @ faces_psi[j]
        B[row, face_cols(j, 1)] += n[0] * ipsi
        B[row, face_cols(j, 0)] -= n[1] * ipsi
    R = np.linalg.solve(A, B)

    # -- stabilization ------------------------------------------------------
    PiT = np.linalg.solve(M, (phi * w[:, None]).T @ phi1)  # P^{k+1} -> P^k
    PiT2 = sla.block_diag(PiT, PiT)
    selT = np.zeros((nT, ndof))
    selT[:, :nT] = np.eye(nT)
    cell_res = PiT2 @ R - selT  # pi_T(r v - v_T)
    deltas, stab, strain = [], np.zeros((ndof, ndof)), np.zeros((ndof, ndof))
    factor_rows = []
    face_h = geo.face_diameters
    for j in range(m):
        fq, psi = faces_q[j], faces_psi[j]
        MF = face_mass[j]
        wpsi = (psi * fq.weights[:, None]).T
        PiF1 = np.linalg.solve(MF, wpsi @ faces_phi1[j])  # trace P^{k+1} -> P^k(F)
        TrF = np.linalg.solve(MF, wpsi @ faces_phi[j])  # trace P^k(T) -> P^k(F)
        PiF12, TrF2, MF2 = (sla.block_diag(X, X) for X in (PiF1, TrF, MF))
        selF = np.zeros((2 * nf, ndof))
        selF[:, face_cols(j, 0).start : face_cols(j, 1).stop] = np.eye(2 * nf)
        delta = PiF12 @ R - selF - TrF2 @ cell_res
        deltas.append(delta)
        stab += delta.T @ MF2 @ delta / face_h[j]
        jump = selF - TrF2 @ selT
        strain += jump.T @ MF2 @ jump / face_h[j]
        factor_rows.append(np.linalg.cholesky(MF2).T @ jump / np.sqrt(face_h[j]))
    # cell part of the strain seminorm: ||grad_s v_T||^2
    EsT = np.zeros((len(w), nT, 2, 2))
    EsT[:, :nk, 0, :] = dphi
    EsT[:, nk:, 1, :] = dphi
    EsT = 0.5 * (EsT + np.swapaxes(EsT, 2, 3))
    strain[:nT, :nT] += np.einsum("q,qaij,qbij->ab", w, EsT, EsT)
    cell_rows = np.zeros((len(w) * 4, ndof))
    cell_rows[:, :nT] = (np.sqrt(w)[:, None, None, None] * EsT).transpose(0, 2, 3, 1).reshape(-1, nT)
    strain_factor = np.vstack([cell_rows] + factor_rows)
    G_norm = G.T @ MG @ G

    # -- coupling with P^k pressures ----------------------------------------
    Bp = np.zeros((nk, ndof))
    Bp[:, sx] = wdx
    Bp[:, sy] = wdy
    for j in range(m):
        n = geo.face_normals[j]
        fq = faces_q[j]
        I = (faces_phi[j] * fq.weights[:, None]).T @ faces_psi[j]
        Bp[:, face_cols(j, 0)] -= n[0] * I
        Bp[:, face_cols(j, 1)] -= n[1] * I

    x0 = geo.centroid
    return LocalOperators(
        k=k,
        n_faces=m,
        nk=nk,
        nk1=nk1,
        nf=nf,
        ndof=ndof,
        quad_points=quad.points - x0,
        quad_weights=w,
        phi=phi,
        dphi=dphi,
        mass=M,
        mean=mean,
        G=G,
        R=R,
        deltas=deltas,
        face_mass=face_mass,
        face_h=face_h,
        stab=stab,
        strain=strain,
        strain_factor=strain_factor,
        G_norm=G_norm,
        Bp=Bp,
        face_quad_points=[fq.points - x0 for fq in faces_q],
        face_quad_weights=[fq.weights for fq in faces_q],
        face_psi=faces_psi,
        face_phi=faces_phi,
        face_normals=geo.face_normals,
    )


def _shape_key(mesh: PolyMesh, c: int) -> tuple:
    geo = mesh.cell(c)
    scale = geo.diameter
    rel = np.round((geo.vertices - geo.centroid) / scale, 12) + 0.0
    star = np.round((geo.star_point - geo.centroid) / scale, 12) + 0.0
    loop = mesh.cells[c]
    orient = tuple(
        int(mesh.faces[f, 0] == loop[j]) for j, f in enumerate(geo.faces)
    )
    return (round(scale, 14), rel.tobytes(), star.tobytes(), orient)


@dataclass
class CellGroup:
    """Cells with the same face count, stacked for vectorized kernels."""

    cells: np.ndarray
    dofs: np.ndarray  # (nc, ndof) global displacement dofs
    G: np.ndarray  # (nc, 3 nk, ndof)
    phi: np.ndarray  # (nc, nq, nk)
    weights: np.ndarray  # (nc, nq)
    points: np.ndarray  # (nc, nq, 2) physical
    stab: np.ndarray  # (nc, ndof, ndof)
    strain: np.ndarray
    strain_factor: np.ndarray
    Bp: np.ndarray  # (nc, nk, ndof)
    regions: np.ndarray


class HHOSpace:
    """Global HHO displacement space on a mesh plus its local operators.

    Displacement vector layout: all cell blocks (``2 nk`` each), then all
    face blocks (``2 nf`` each).  Pressure vector: cell blocks of ``nk``.
    """

    def __init__(self, mesh: PolyMesh, k: int, orthonormalize=False, quad_order=None):
        self.mesh = mesh
        self.k = k
        self.orthonormalize = orthonormalize
        self.quad_order = 2 * k + 2 if quad_order is None else quad_order
        self.nk = dim_poly(k)
        self.nk1 = dim_poly(k + 1)
        self.nf = k + 1
        nc, nfaces = mesh.n_cells, mesh.n_faces
        self.n_cell_dofs = 2 * self.nk * nc
        self.n_u = self.n_cell_dofs + 2 * self.nf * nfaces
        self.n_p = self.nk * nc
        cache: dict = {}
        self.ops: list[LocalOperators] = []
        for c in range(nc):
            key = _shape_key(mesh, c)
            op = cache.get(key)
            if op is None:
                op = build_local_operators(mesh, c, k, orthonormalize, self.quad_order)
                cache[key] = op
            self.ops.append(op)
        self.n_distinct_shapes = len(cache)
        bnd = np.zeros(self.n_u, dtype=bool)
        for f in mesh.boundary_faces:
            bnd[self.face_dofs(f)] = True
        self.fixed = bnd
        self.free = np.flatnonzero(~bnd)
        self.groups = self._build_groups()

    # -- dof maps --------------------------------------------------------

    def cell_dofs(self, c: int) -> np.ndarray:
        n = 2 * self.nk
        return np.arange(c * n, (c + 1) * n)

    def face_dofs(self, f: int) -> np.ndarray:
        n = 2 * self.nf
        start = self.n_cell_dofs + f * n
        return np.arange(start, start + n)

    def local_dofs(self, c: int) -> np.ndarray:
        faces = self.mesh.cell(c).faces
        return np.concatenate([self.cell_dofs(c)] + [self.face_dofs(f) for f in faces])

    def pressure_dofs(self, c: int) -> np.ndarray:
        return np.arange(c * self.nk, (c + 1) * self.nk)

    def _build_groups(self) -> list[CellGroup]:
        by_m: dict[int, list[int]] = {}
        for c in range(self.mesh.n_cells):
            by_m.setdefault(self.mesh.cell(c).n_faces, []).append(c)
        groups = []
        for m, cells in sorted(by_m.items()):
            ops = [self.ops[c] for c in cells]
            centroids = np.array([self.mesh.cell(c).centroid for c in cells])
            groups.append(
                CellGroup(
                    cells=np.array(cells),
                    dofs=np.array([self.local_dofs(c) for c in cells]),
                    G=np.array([o.G for o in ops]),
                    phi=np.array([o.phi for o in ops]),
                    weights=np.array([o.quad_weights for o in ops]),
                    points=np.array([o.quad_points for o in ops]) + centroids[:, None, :],
                    stab=np.array([o.stab for o in ops]),
                    strain=np.array([o.strain for o in ops]),
                    strain_factor=np.array([o.strain_factor for o in ops]),
                    Bp=np.array([o.Bp for o in ops]),
                    regions=self.mesh.regions[cells],
                )
            )
        return groups

    # -- interpolation -----------------------------------------------------

    def cell_basis(self, c: int) -> CellBasis:
        geo = self.mesh.cell(c)
        quad = None
        if self.orthonormalize:
            quad = cell_quadrature(geo, self.quad_order)
        return CellBasis(geo.centroid, geo.diameter, self.k, self.orthonormalize, quad)

    def cell_quad(self, c: int) -> QuadratureRule:
        op = self.ops[c]
        x0 = self.mesh.cell(c).centroid
        return QuadratureRule(op.quad_points + x0, op.quad_weights, self.quad_order)

    def interpolate_local(self, c: int, func, order=None) -> np.ndarray:
        """``I^k_T v`` for a vector field ``func(points) -> (n, 2)``.

        ``order`` selects the quadrature used to sample ``func``; the
        default is the operators' own rule (order ``2k + 2``).
        """
        op = self.ops[c]
        geo = self.mesh.cell(c)
        x0 = geo.centroid
        out = np.empty(op.ndof)
        if order is None:
            pts, wq, phi = op.quad_points + x0, op.quad_weights, op.phi
        else:
            q = cell_quadrature(geo, order)
            pts, wq, phi = q.points, q.weights, self.cell_basis(c).values(q.points)
        vals = np.asarray(func(pts), dtype=float)
        out[: 2 * op.nk] = np.linalg.solve(op.mass, (phi * wq[:, None]).T @ vals).T.ravel()
        for j, f in enumerate(geo.faces):
            if order is None:
                pts, wq, psi = op.face_quad_points[j] + x0, op.face_quad_weights[j], op.face_psi[j]
            else:
                a, b = self.mesh.vertices[self.mesh.faces[f]]
                q = face_quadrature(a, b, order)
                pts, wq = q.points, q.weights
                psi = self.face_basis(f).values(pts)
            vals = np.asarray(func(pts), dtype=float)
            coef = np.linalg.solve(op.face_mass[j], (psi * wq[:, None]).T @ vals)
            start = 2 * op.nk + j * 2 * op.nf
            out[start : start + 2 * op.nf] = coef.T.ravel()
        return out

    def face_basis(self, f: int) -> FaceBasis:
        a, b = self.mesh.vertices[self.mesh.faces[f]]
        quad = face_quadrature(a, b, self.quad_order) if self.orthonormalize else None
        return FaceBasis(a, b, self.k, self.orthonormalize, quad)

    def interpolate(self, func, order=None) -> np.ndarray:
        """Global interpolator ``I^k_h v``.  Face values are taken from the
        first incident cell; both cells agree since face bases are shared."""
        u = np.zeros(self.n_u)
        done = np.zeros(self.mesh.n_faces, dtype=bool)
        for c in range(self.mesh.n_cells):
            loc = self.interpolate_local(c, func, order)
            dofs = self.local_dofs(c)
            u[dofs[: 2 * self.nk]] = loc[: 2 * self.nk]
            for j, f in enumerate(self.mesh.cell(c).faces):
                if not done[f]:
                    s = 2 * self.nk + j * 2 * self.nf
                    u[self.face_dofs(f)] = loc[s : s + 2 * self.nf]
                    done[f] = True
        return u

    def project_pressure(self, func, order=None) -> np.ndarray:
        """``pi^k_h q`` of a scalar function, as a pressure vector."""
        p = np.zeros(self.n_p)
        for c, op in enumerate(self.ops):
            if order is None:
                x, wq, phi = op.quad_points + self.mesh.cell(c).centroid, op.quad_weights, op.phi
            else:
                q = cell_quadrature(self.mesh.cell(c), order)
                x, wq, phi = q.points, q.weights, self.cell_basis(c).values(q.points)
            rhs = (phi * wq[:, None]).T @ np.asarray(func(x), dtype=float)
            p[self.pressure_dofs(c)] = np.linalg.solve(op.mass, rhs)
        return p

    def mean_vector(self) -> np.ndarray:
        """Vector ``m`` with ``m . p = int_Omega p_h``."""
        return np.concatenate([op.mean for op in self.ops])

    def pressure_mass(self):
        import scipy.sparse as sp

        return sp.block_diag([op.mass for op in self.ops], format="csr")

    # -- local evaluation --------------------------------------------------

    def sym_gradient(self, c: int, u_local: np.ndarray) -> np.ndarray:
        """Coefficients of ``G^k_{s,T} u`` as (3, nk): xx, yy, xy."""
        return (self.ops[c].G @ u_local).reshape(3, self.nk)

    def sym_gradient_at(self, c: int, u_local, points) -> np.ndarray:
        coef = self.sym_gradient(c, u_local)
        vals = self.cell_basis(c).values(points) @ coef.T  # (n, 3)
        return np.einsum("nc,cij->nij", vals, SYM_BASIS)

    def reconstruct(self, c: int, u_local: np.ndarray) -> np.ndarray:
        """Coefficients of ``r^{k+1}_T u`` on the P^{k+1} basis, (2, nk1)."""
        return (self.ops[c].R @ u_local).reshape(2, self.nk1)

    def reconstruction_basis(self, c: int) -> CellBasis:
        geo = self.mesh.cell(c)
        quad = cell_quadrature(geo, self.quad_order) if self.orthonormalize else None
        return CellBasis(geo.centroid, geo.diameter, self.k + 1, self.orthonormalize, quad)

    def stab_residuals(self, c: int, u_local: np.ndarray) -> list[np.ndarray]:
        return [(d @ u_local).reshape(2, self.nf) for d in self.ops[c].deltas]

    # -- seminorms ---------------------------------------------------------

    def strain_seminorm(self, u: np.ndarray) -> float:
        total = 0.0
        for grp in self.groups:
            r = np.einsum("crj,cj->cr", grp.strain_factor, u[grp.dofs])
            total += np.sum(r * r)
        return float(np.sqrt(total))

    def strain_matrix(self):
        return self._assemble_local(lambda grp: grp.strain)

    def gradient_stab_matrix(self):
        """Matrix of ``sum_T ||G v||^2 + sum_F h_F^-1 ||Delta v||^2``."""
        blocks = {id(op): op.G_norm + op.stab for op in self.ops}
        return self._assemble_per_cell(lambda c: blocks[id(self.ops[c])])

    def _assemble_local(self, getter):
        import scipy.sparse as sp

        rows, cols, vals = [], [], []
        for grp in self.groups:
            blk = getter(grp)
            nd = grp.dofs.shape[1]
            rows.append(np.repeat(grp.dofs, nd, axis=1).ravel())
            cols.append(np.tile(grp.dofs, (1, nd)).ravel())
            vals.append(blk.ravel())
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_u, self.n_u),
        )

    def _assemble_per_cell(self, getter):
        import scipy.sparse as sp

        rows, cols, vals = [], [], []
        for c in range(self.mesh.n_cells):
            d = self.local_dofs(c)
            blk = getter(c)
            rows.append(np.repeat(d, len(d)))
            cols.append(np.tile(d, len(d)))
            vals.append(blk.ravel())
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_u, self.n_u),
        )

    def cell_values(self, u: np.ndarray, c: int, points) -> np.ndarray:
        """Values of the broken cell field ``v_T`` at ``points``."""
        coef = u[self.cell_dofs(c)].reshape(2, self.nk)
        return self.cell_basis(c).values(points) @ coef.T

    def displacement_l2(self, u: np.ndarray) -> float:
        """``||v_h||_Omega`` of the broken cell field."""
        total = 0.0
        for c, op in enumerate(self.ops):
            coef = u[self.cell_dofs(c)].reshape(2, self.nk)
            total += np.einsum("ci,ij,cj->", coef, op.mass, coef)
        return float(np.sqrt(total))


def interpolate(space: HHOSpace, func, order=None) -> np.ndarray:
    return space.interpolate(func, order)


def strain_seminorm(space: HHOSpace, u: np.ndarray) -> float:
    return space.strain_seminorm(u)
