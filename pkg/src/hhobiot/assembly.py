"""Assembly of the discrete elasticity, coupling and Darcy forms."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import face_quadrature
from .constitutive import RegionalLaw, StressLaw
from .hho import SYM_BASIS, HHOSpace

logger = logging.getLogger(__name__)


class AssemblyError(RuntimeError):
    pass


# -- permeability -----------------------------------------------------------


def kappa_tensor(kappa, region: int, d: int = 2) -> np.ndarray:
    """Permeability tensor of ``region``.

    ``kappa`` is a scalar, a ``d x d`` array, or a dict mapping region ids to
    either of those.
    """
    if isinstance(kappa, dict):
        kappa = kappa[region]
    K = np.asarray(kappa, dtype=float)
    if K.ndim == 0:
        K = K * np.eye(d)
    if K.shape != (d, d):
        raise ValueError(f"bad permeability shape {K.shape}")
    if not np.allclose(K, K.T):
        raise ValueError("permeability must be symmetric")
    if np.linalg.eigvalsh(K).min() <= 0:
        raise ValueError(f"nonpositive permeability eigenvalue in region {region}")
    return K


def harmonic_mean(a: float, b: float) -> float:
    return 2 * a * b / (a + b)


def default_varsigma(k: int, max_faces: int) -> float:
    """Penalty ``6 k^2``, scaled up by ``N_d / 4`` on cells with many faces."""
    return 6.0 * k**2 * max(1.0, max_faces / 4.0)


# -- elasticity -------------------------------------------------------------


def _eval_law(law: StressLaw, tau, x, regions, want_tangent: bool):
    if isinstance(law, RegionalLaw):
        sig = np.empty_like(tau)
        tan = np.empty(tau.shape + (2, 2)) if want_tangent else None
        for r in np.unique(regions):
            sel = regions == r
            sub = law.for_region(int(r))
            sig[sel] = sub.stress(tau[sel], x[sel])
            if want_tangent:
                tan[sel] = sub.tangent(tau[sel], x[sel])
        return sig, tan
    sig = law.stress(tau, x)
    tan = law.tangent(tau, x) if want_tangent else None
    return sig, tan


def _group_strains(space: HHOSpace, grp, u):
    uloc = u[grp.dofs]
    g = np.einsum("cad,cd->ca", grp.G, uloc).reshape(len(grp.cells), 3, space.nk)
    vals = np.einsum("cqi,cki->cqk", grp.phi, g)
    tau = np.einsum("cqk,kij->cqij", vals, SYM_BASIS)
    return uloc, tau


def elasticity_local(space: HHOSpace, u, law: StressLaw, gamma: float, want_jacobian=True):
    """Per-group local residuals and Jacobians of ``a_h(u, .)``.

    Returns a list of ``(residual (nc, ndof), jacobian (nc, ndof, ndof))``.
    """
    out = []
    nk = space.nk
    for grp in space.groups:
        nc = len(grp.cells)
        uloc, tau = _group_strains(space, grp, u)
        regions = np.broadcast_to(grp.regions[:, None], tau.shape[:2])
        sig, tan = _eval_law(law, tau, grp.points, regions, want_jacobian)
        if not np.all(np.isfinite(sig)):
            bad = grp.cells[np.flatnonzero(~np.isfinite(sig).all(axis=(1, 2, 3)))[0]]
            raise AssemblyError(f"non-finite stress in cell {bad}")
        sig3 = np.stack([sig[..., 0, 0], sig[..., 1, 1], 2 * sig[..., 0, 1]], axis=-1)
        wphi = grp.weights[:, :, None] * grp.phi
        proj = np.einsum("cqi,cqa->cai", wphi, sig3).reshape(nc, 3 * nk)
        res = np.einsum("cam,ca->cm", grp.G, proj) + gamma * np.einsum(
            "cmn,cn->cm", grp.stab, uloc
        )
        jac = None
        if want_jacobian:
            nq = tan.shape[1]
            S4 = SYM_BASIS.reshape(3, 4)
            K3 = S4 @ tan.reshape(nc, nq, 4, 4) @ S4.T
            # sum over quadrature points as a batched matmul
            outer = (wphi[:, :, :, None] * grp.phi[:, :, None, :]).reshape(nc, nq, nk * nk)
            Kloc = np.swapaxes(K3.reshape(nc, nq, 9), 1, 2) @ outer
            Kloc = Kloc.reshape(nc, 3, 3, nk, nk).transpose(0, 1, 3, 2, 4).reshape(nc, 3 * nk, 3 * nk)
            jac = np.swapaxes(grp.G, 1, 2) @ Kloc @ grp.G
            jac += gamma * grp.stab
        out.append((res, jac))
    return out


def _scatter_vector(space: HHOSpace, local, n):
    vec = np.zeros(n)
    for grp, (res, _) in zip(space.groups, local):
        np.add.at(vec, grp.dofs.ravel(), res.ravel())
    return vec


def _scatter_matrix(space: HHOSpace, blocks, n):
    rows, cols, vals = [], [], []
    for grp, blk in zip(space.groups, blocks):
        nd = grp.dofs.shape[1]
        rows.append(np.repeat(grp.dofs, nd, axis=1).ravel())
        cols.append(np.tile(grp.dofs, (1, nd)).ravel())
        vals.append(blk.ravel())
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def assemble_elasticity(space: HHOSpace, u, law: StressLaw, gamma: float, want_jacobian=True):
    """Residual ``a_h(u, phi_i)`` over all displacement dofs and its Jacobian.

    Boundary rows are included; callers restrict to free dofs.
    """
    local = elasticity_local(space, u, law, gamma, want_jacobian)
    res = _scatter_vector(space, local, space.n_u)
    jac = None
    if want_jacobian:
        jac = _scatter_matrix(space, [j for _, j in local], space.n_u)
    return res, jac


def a_h(space: HHOSpace, u, v, law: StressLaw, gamma: float) -> float:
    res, _ = assemble_elasticity(space, u, law, gamma, want_jacobian=False)
    return float(res @ v)


# -- coupling ---------------------------------------------------------------


def assemble_coupling(space: HHOSpace) -> sp.csr_matrix:
    """Matrix ``B`` with ``q^T B v = b_h(v, q)``, shape ``(n_p, n_u)``."""
    rows, cols, vals = [], [], []
    for grp in space.groups:
        nc, nk, nd = grp.Bp.shape
        prow = grp.cells[:, None] * nk + np.arange(nk)[None, :]
        rows.append(np.repeat(prow, nd, axis=1).ravel())
        cols.append(np.tile(grp.dofs, (1, nk)).ravel())
        vals.append(grp.Bp.ravel())
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(space.n_p, space.n_u),
    )


# -- Darcy (SWIP) -----------------------------------------------------------


@dataclass
class DarcyMatrices:
    volume: sp.csr_matrix  # int K grad r . grad q
    penalty: sp.csr_matrix  # sum_F lambda_F / h_F int [r][q]
    consistency: sp.csr_matrix  # sum_F int [r] {K grad q}_w . n
    varsigma: float

    @property
    def c(self) -> sp.csr_matrix:
        """Matrix of ``c_h``."""
        return (
            self.volume
            + self.varsigma * self.penalty
            - self.consistency
            - self.consistency.T
        ).tocsr()

    @property
    def seminorm(self) -> sp.csr_matrix:
        """Matrix of the squared pressure seminorm."""
        return (self.volume + self.penalty).tocsr()


def face_diffusivities(space: HHOSpace, kappa, f: int):
    """``(lambda_F1, lambda_F2, lambda_F)`` of an interior face."""
    mesh = space.mesh
    c1, c2 = mesh.face_cells[f]
    n = mesh.face_normal(f)
    l1 = n @ kappa_tensor(kappa, mesh.regions[c1]) @ n
    l2 = n @ kappa_tensor(kappa, mesh.regions[c2]) @ n
    return l1, l2, harmonic_mean(l1, l2)


def assemble_darcy_swip(space: HHOSpace, kappa, varsigma: float | None = None) -> DarcyMatrices:
    """Symmetric weighted interior penalty discretization, Neumann boundary."""
    mesh = space.mesh
    nk = space.nk
    if varsigma is None:
        varsigma = default_varsigma(space.k, max(g.n_faces for g in mesh.geometry))
    if varsigma <= 0:
        raise ValueError("penalty parameter must be positive")
    blocks = []
    for c in range(mesh.n_cells):
        op = space.ops[c]
        K = kappa_tensor(kappa, mesh.regions[c])
        dphi = op.dphi
        kd = np.einsum("qia,ab->qib", dphi, K)
        blocks.append(np.einsum("q,qia,qja->ij", op.quad_weights, kd, dphi))
    vol = sp.block_diag(blocks, format="csr")

    bases = [space.cell_basis(c) for c in range(mesh.n_cells)]
    pr, pc, pv, cr, cc, cv = [], [], [], [], [], []
    order = 2 * space.k + 2
    for f in mesh.interior_faces:
        c1, c2 = mesh.face_cells[f]
        a, b = mesh.vertices[mesh.faces[f]]
        q = face_quadrature(a, b, order)
        n = mesh.face_normal(f)
        K1 = kappa_tensor(kappa, mesh.regions[c1])
        K2 = kappa_tensor(kappa, mesh.regions[c2])
        l1, l2 = n @ K1 @ n, n @ K2 @ n
        lam = harmonic_mean(l1, l2)
        s1, s2 = np.sqrt(l1), np.sqrt(l2)
        w1, w2 = s2 / (s1 + s2), s1 / (s1 + s2)
        hF = float(np.hypot(*(b - a)))
        v1, v2 = bases[c1].values(q.points), bases[c2].values(q.points)
        g1 = bases[c1].gradients(q.points) @ (K1 @ n)
        g2 = bases[c2].gradients(q.points) @ (K2 @ n)
        jump = np.hstack([v1, -v2])  # (nq, 2 nk)
        avg = np.hstack([w1 * g1, w2 * g2])
        dofs = np.concatenate([np.arange(c1 * nk, (c1 + 1) * nk), np.arange(c2 * nk, (c2 + 1) * nk)])
        P = (lam / hF) * (jump * q.weights[:, None]).T @ jump
        Cn = (jump * q.weights[:, None]).T @ avg  # rows: jump test, cols: avg
        R = np.repeat(dofs, len(dofs))
        Cc = np.tile(dofs, len(dofs))
        pr.append(R), pc.append(Cc), pv.append(P.ravel())
        cr.append(R), cc.append(Cc), cv.append(Cn.ravel())
    n = space.n_p

    def build(r, c, v):
        if not r:
            return sp.csr_matrix((n, n))
        return sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=(n, n))

    return DarcyMatrices(vol, build(pr, pc, pv), build(cr, cc, cv), float(varsigma))


def pressure_seminorm(darcy: DarcyMatrices, q) -> float:
    return float(np.sqrt(max(q @ (darcy.seminorm @ q), 0.0)))


def swip_coercivity(darcy: DarcyMatrices, dense_limit=4000) -> float:
    """Smallest eigenvalue of ``c_h`` relative to the seminorm on zero-mean
    functions, capped at 1.

    Both matrices vanish exactly on constants; adding ``e e^T`` (``e`` the
    constant dof of cell 0) to both shifts that direction to eigenvalue 1
    and leaves the others unchanged.
    """
    C, N = darcy.c, darcy.seminorm
    n = C.shape[0]
    e = sp.csr_matrix(([1.0], ([0], [0])), shape=(n, n))
    # scale to the matrix magnitude for conditioning
    s = abs(N.diagonal()).max()
    Cm, Nm = (C + s * e).tocsc(), (N + s * e).tocsc()
    if n <= dense_limit:
        import scipy.linalg as sla

        vals = sla.eigh(Cm.toarray(), Nm.toarray(), eigvals_only=True)
        return float(min(vals.min(), 1.0))
    from scipy.sparse.linalg import eigsh

    val = eigsh(Cm, k=1, M=Nm, sigma=0.0, which="LM", return_eigenvectors=False)
    return float(min(val.min(), 1.0))


# -- loads -----------------------------------------------------------------


def gauss_times(t0: float, t1: float, n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (t1 - t0) * (x + 1) + t0, 0.5 * w


def time_average(psi, t0: float, t1: float, n: int = 2):
    """``(t1 - t0)^-1 int_{t0}^{t1} psi(t) dt`` by ``n``-point Gauss."""
    ts, ws = gauss_times(t0, t1, n)
    return sum(w * psi(t) for t, w in zip(ts, ws))


class LoadAssembler:
    """Time-averaged volume loads and boundary fluxes on a fixed space."""

    def __init__(self, space: HHOSpace, order: int | None = None):
        self.space = space
        mesh = space.mesh
        bf = mesh.boundary_faces
        order = space.quad_order if order is None else order
        pts, wts, phis, cells, normals = [], [], [], [], []
        for f in bf:
            c = mesh.face_cells[f, 0]
            a, b = mesh.vertices[mesh.faces[f]]
            q = face_quadrature(a, b, order)
            pts.append(q.points)
            wts.append(q.weights)
            phis.append(space.cell_basis(c).values(q.points))
            cells.append(c)
            normals.append(mesh.face_normal(f))
        self.b_points = np.array(pts).reshape(len(bf), -1, 2)
        self.b_weights = np.array(wts)
        self.b_phi = np.array(phis)
        self.b_cells = np.array(cells, dtype=int)
        self.b_normals = np.array(normals).reshape(len(bf), 2)

    def displacement_load(self, f) -> np.ndarray:
        """``(f, v_h)`` for ``f(points (..., 2)) -> (..., 2)``."""
        sp_ = self.space
        vec = np.zeros(sp_.n_u)
        for grp in sp_.groups:
            vals = np.asarray(f(grp.points), dtype=float)
            loc = np.einsum("cq,cqi,cqd->cdi", grp.weights, grp.phi, vals)
            vec[grp.dofs[:, : 2 * sp_.nk]] += loc.reshape(len(grp.cells), -1)
        return vec

    def pressure_load(self, g) -> np.ndarray:
        """``(g, q_h)`` for a scalar ``g(points) -> (...)``."""
        sp_ = self.space
        vec = np.zeros(sp_.n_p)
        for grp in sp_.groups:
            vals = np.asarray(g(grp.points), dtype=float)
            loc = np.einsum("cq,cqi,cq->ci", grp.weights, grp.phi, vals)
            idx = grp.cells[:, None] * sp_.nk + np.arange(sp_.nk)
            vec[idx] += loc
        return vec

    def boundary_flux_load(self, flux) -> np.ndarray:
        """``sum_F int_F j q_h`` over boundary faces for ``flux(points, normals)``."""
        sp_ = self.space
        vec = np.zeros(sp_.n_p)
        if len(self.b_cells) == 0:
            return vec
        normals = np.broadcast_to(self.b_normals[:, None, :], self.b_points.shape)
        vals = np.asarray(flux(self.b_points, normals), dtype=float)
        loc = np.einsum("fq,fqi,fq->fi", self.b_weights, self.b_phi, vals)
        idx = self.b_cells[:, None] * sp_.nk + np.arange(sp_.nk)
        np.add.at(vec, idx, loc)
        return vec


def time_averaged_rhs(loads: LoadAssembler, f, g, t0, t1, flux=None, n_time=2):
    """Averaged load vectors over ``(t0, t1)``.

    ``f(x, t)``, ``g(x, t)`` and ``flux(x, n, t)`` are space-time functions;
    returns ``(f_bar vector, g_bar vector incl. boundary flux)``.
    """
    ts, ws = gauss_times(t0, t1, n_time)
    fv = np.zeros(loads.space.n_u)
    gv = np.zeros(loads.space.n_p)
    for t, w in zip(ts, ws):
        if f is not None:
            fv += w * loads.displacement_load(lambda x: f(x, t))
        if g is not None:
            gv += w * loads.pressure_load(lambda x: g(x, t))
        if flux is not None:
            gv += w * loads.boundary_flux_load(lambda x, n: flux(x, n, t))
    return fv, gv
