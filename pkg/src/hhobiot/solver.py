"""Backward-Euler time stepping with Newton and static condensation.

At each step the unknowns ``(u_h^n, p_h^n)`` solve

    a_h(u, v) + b_h(v, p)                        = (f_bar, v)
    b_h(u, q) - C0 (p, q) - tau c_h(p, q)        = -phi^{n-1}(q) - tau (g_bar, q)

where ``phi^{n-1}(q) = C0 (p^{n-1}, q) - b_h(u^{n-1}, q)`` is the discrete
fluid content (``(phi^0, q)`` at the first step).  This is the flow equation
multiplied by ``-tau``, which makes the linearized system symmetric.  When
``C0 = 0`` a scalar multiplier enforces ``int p_h = 0``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    LoadAssembler,
    _scatter_matrix,
    assemble_coupling,
    assemble_darcy_swip,
    elasticity_local,
    gauss_times,
    swip_coercivity,
)
from .constitutive import StressLaw, recommended_gamma
from .hho import HHOSpace
from .mesh import PolyMesh

try:  # AMD ordering from SuiteSparse, shipped with cvxopt
    import cvxopt as _cvxopt
    import cvxopt.amd as _amd
except ImportError:  # pragma: no cover
    _amd = None

logger = logging.getLogger(__name__)


def amd_ordering(A) -> np.ndarray:
    """Approximate minimum degree ordering of the pattern of ``A + A^T``."""
    S = (abs(A) + abs(A.T)).tocoo()
    M = _cvxopt.spmatrix(1.0, S.row.tolist(), S.col.tolist(), S.shape)
    return np.array(_amd.order(M), dtype=int).ravel()


class SolverError(RuntimeError):
    pass


class NewtonError(SolverError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


@dataclass
class TimeGrid:
    t_final: float
    steps: int

    def __post_init__(self):
        if self.steps < 1 or self.t_final <= 0:
            raise ValueError("need t_final > 0 and at least one step")

    @property
    def tau(self) -> float:
        return self.t_final / self.steps

    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.tau


def backward_difference(values, tau):
    """``(phi^n - phi^{n-1}) / tau`` for a sequence of states."""
    values = np.asarray(values, dtype=float)
    return (values[1:] - values[:-1]) / tau


@dataclass
class SolverConfig:
    c0: float = 0.0
    kappa: object = 1.0
    law: StressLaw | None = None
    gamma: float | None = None
    varsigma: float | None = None
    newton_tol: float = 1e-10
    newton_max: int = 25
    condense: bool = True
    time_quad: int = 2
    check_coercivity: bool = True
    ordering: str = "amd"  # amd | colamd

    def __post_init__(self):
        if self.c0 < 0:
            raise ValueError("C0 must be nonnegative")
        if self.newton_tol <= 0 or self.newton_max < 1:
            raise ValueError("bad Newton settings")
        if self.ordering not in ("amd", "colamd"):
            raise ValueError(f"unknown ordering {self.ordering!r}")
        if self.ordering == "amd" and _amd is None:
            self.ordering = "colamd"


@dataclass
class ProblemData:
    """Space-time data.  ``None`` entries are zero.

    ``f(x, t) -> (..., 2)``, ``g(x, t) -> (...)``,
    ``flux(x, n, t) -> (...)`` the prescribed ``K grad p . n`` on the
    boundary, ``dirichlet(x, t) -> (..., 2)`` the boundary displacement,
    ``phi0(x) -> (...)`` the initial fluid content.
    """

    f: Callable | None = None
    g: Callable | None = None
    flux: Callable | None = None
    dirichlet: Callable | None = None
    phi0: Callable | None = None


@dataclass
class SystemState:
    u: np.ndarray
    p: np.ndarray
    step: int = 0
    time: float = 0.0
    fluid: np.ndarray | None = None  # C0 M p - B u, as a vector on P^k
    newton_iterations: int = 0
    residual_history: list = field(default_factory=list)
    multiplier: float = 0.0

    def copy(self):
        return SystemState(
            self.u.copy(), self.p.copy(), self.step, self.time,
            None if self.fluid is None else self.fluid.copy(),
            self.newton_iterations, list(self.residual_history), self.multiplier,
        )


@dataclass
class Trajectory:
    states: list
    grid: TimeGrid
    diagnostics: dict
    metadata: dict


class _Condenser:
    """Index bookkeeping for eliminating cell displacement dofs."""

    def __init__(self, disc: "BiotDiscretization"):
        space = disc.space
        nT = 2 * space.nk
        fixed = space.fixed
        # reduced numbering: free face dofs, pressures, multiplier
        face_ids = np.full(space.n_u, -1)
        free_faces = np.flatnonzero(~fixed[space.n_cell_dofs :]) + space.n_cell_dofs
        face_ids[free_faces] = np.arange(len(free_faces))
        self.n_face = len(free_faces)
        self.free_faces = free_faces
        self.p_offset = self.n_face
        self.n = self.n_face + space.n_p + (1 if disc.multiplier else 0)
        self.groups = []
        for grp in space.groups:
            fdofs = grp.dofs[:, nT:]
            pidx = grp.cells[:, None] * space.nk + np.arange(space.nk)
            ridx = np.hstack([face_ids[fdofs], self.p_offset + pidx])
            nr = ridx.shape[1]
            rows = np.repeat(ridx, nr, axis=1).ravel()
            cols = np.tile(ridx, (1, nr)).ravel()
            mask = (rows >= 0) & (cols >= 0)
            self.groups.append((ridx, rows[mask], cols[mask], mask))


class BiotDiscretization:
    """Assembled forms for one mesh, degree and physical configuration."""

    def __init__(self, mesh: PolyMesh, k: int, config: SolverConfig, space: HHOSpace | None = None):
        if config.law is None:
            raise ValueError("a stress law is required")
        self.mesh = mesh
        self.k = k
        self.config = config
        self.space = space if space is not None else HHOSpace(mesh, k)
        self.gamma = recommended_gamma(config.law, config.gamma)
        if self.gamma <= 0:
            raise ValueError("stabilization parameter gamma must be positive")
        self.B = assemble_coupling(self.space)
        self.darcy = assemble_darcy_swip(self.space, config.kappa, config.varsigma)
        self.C = self.darcy.c
        self.M = self.space.pressure_mass()
        self.mean = self.space.mean_vector()
        self.multiplier = config.c0 == 0
        self.loads = LoadAssembler(self.space)
        self.coercivity = None
        if config.check_coercivity:
            self.coercivity = swip_coercivity(self.darcy)
            if self.coercivity <= 1e-8:
                raise SolverError(
                    f"SWIP form not coercive for varsigma={self.darcy.varsigma:g} "
                    f"(min eigenvalue {self.coercivity:.3e}); increase varsigma"
                )
        self._cond = _Condenser(self)
        self._orderings: dict = {}

    # -- metadata ------------------------------------------------------------

    def metadata(self) -> dict:
        from .mesh import MESH_SIZE_CONVENTION

        return {
            "k": self.k,
            "h": self.mesh.h,
            "n_cells": self.mesh.n_cells,
            "gamma": self.gamma,
            "varsigma": self.darcy.varsigma,
            "c0": self.config.c0,
            "law": self.config.law.describe(),
            "newton_tol": self.config.newton_tol,
            "newton_max": self.config.newton_max,
            "newton_criterion": "relative l2 residual of the full algebraic system",
            "condense": self.config.condense,
            "mesh_size_convention": MESH_SIZE_CONVENTION,
        }

    # -- residual and Jacobian -------------------------------------------------

    def residual(self, state: SystemState, fvec, flow_rhs, tau, law=None, want_jacobian=False):
        """Full residual ``(R_u over all u dofs, R_p, R_lambda)`` plus the
        local elasticity blocks (with Jacobians if requested)."""
        law = self.config.law if law is None else law
        local = elasticity_local(self.space, state.u, law, self.gamma, want_jacobian)
        ru = np.zeros(self.space.n_u)
        for grp, (res, _) in zip(self.space.groups, local):
            np.add.at(ru, grp.dofs.ravel(), res.ravel())
        ru += self.B.T @ state.p - fvec
        rp = self.B @ state.u - self.config.c0 * (self.M @ state.p) - tau * (self.C @ state.p) + flow_rhs
        if self.multiplier:
            rp += state.multiplier * self.mean
        rl = self.mean @ state.p if self.multiplier else None
        return ru, rp, rl, local

    def _static_blocks(self, tau):
        off = self._cond.p_offset
        # the C0 pressure mass is cell-local and enters through the condensed blocks
        P = (-tau * self.C).tocoo()
        rows = [P.row + off]
        cols = [P.col + off]
        vals = [P.data]
        if self.multiplier:
            m = np.flatnonzero(self.mean)
            lam = self._cond.n - 1
            rows += [off + m, np.full(len(m), lam)]
            cols += [np.full(len(m), lam), off + m]
            vals += [self.mean[m], self.mean[m]]
        return rows, cols, vals

    def solve_newton_step(self, state, fvec, flow_rhs, tau, law=None):
        """Solve for the current step in place; returns the iteration count."""
        cfg = self.config
        law = cfg.law if law is None else law
        space = self.space
        free = space.free
        history = []
        ref = None
        it = 0
        while True:
            ru, rp, rl, local = self.residual(state, fvec, flow_rhs, tau, law, want_jacobian=True)
            rnorm = self._norm(ru[free], rp, rl)
            if ref is None:
                ref = max(rnorm, np.linalg.norm(fvec[free]), np.linalg.norm(flow_rhs))
            history.append(rnorm)
            if rnorm <= cfg.newton_tol * ref or ref == 0.0:
                break
            if it >= cfg.newton_max:
                raise NewtonError(
                    f"Newton did not converge in {cfg.newton_max} iterations "
                    f"(relative residual {rnorm / ref:.3e})",
                    history,
                )
            if cfg.condense:
                du, dp, dl = self._solve_condensed(local, ru, rp, rl, tau)
            else:
                du, dp, dl = self._solve_full(local, ru, rp, rl, tau)
            state.u -= du
            state.p -= dp
            if self.multiplier:
                state.multiplier -= dl
            it += 1
        state.newton_iterations = it
        state.residual_history = history
        return it

    @staticmethod
    def _norm(ru, rp, rl):
        total = ru @ ru + rp @ rp
        if rl is not None:
            total += rl * rl
        return float(np.sqrt(total))

    def _solve_full(self, local, ru, rp, rl, tau):
        space = self.space
        free = space.free
        nfree = len(free)
        J = _scatter_matrix(space, [j for _, j in local], space.n_u)[free][:, free]
        Bf = self.B[:, free]
        P = -self.config.c0 * self.M - tau * self.C
        blocks = [[J, Bf.T], [Bf, P]]
        rhs = [ru[free], rp]
        if self.multiplier:
            m = sp.csr_matrix(self.mean[None, :])
            blocks = [
                [J, Bf.T, None],
                [Bf, P, m.T],
                [None, m, sp.csr_matrix((1, 1))],
            ]
            rhs.append([rl])
        A = sp.bmat(blocks, format="csc")
        x = self._linear_solve(A, np.concatenate(rhs))
        du = np.zeros(space.n_u)
        du[free] = x[:nfree]
        dp = x[nfree : nfree + space.n_p]
        dl = x[-1] if self.multiplier else 0.0
        return du, dp, dl

    def _solve_condensed(self, local, ru, rp, rl, tau):
        space = self.space
        cond = self._cond
        nT = 2 * space.nk
        c0 = self.config.c0
        rows, cols, vals = self._static_blocks(tau)
        rhs = np.zeros(cond.n)
        rhs[: cond.n_face] = ru[cond.free_faces]
        rhs[cond.p_offset : cond.p_offset + space.n_p] = rp
        if self.multiplier:
            rhs[-1] = rl
        saved = []
        for grp, (gidx, grows, gcols, mask), (_, jac) in zip(space.groups, cond.groups, local):
            nc = len(grp.cells)
            Bp = grp.Bp
            nk = space.nk
            nd = jac.shape[1]
            nr = nd - nT + nk
            # local system [[J, Bp^T], [Bp, -C0 M_T]] split into cell/rest
            K = np.zeros((nc, nd + nk, nd + nk))
            K[:, :nd, :nd] = jac
            K[:, :nd, nd:] = np.swapaxes(Bp, 1, 2)
            K[:, nd:, :nd] = Bp
            if c0:
                masses = np.array([space.ops[c].mass for c in grp.cells])
                K[:, nd:, nd:] = -c0 * masses
            KTT = K[:, :nT, :nT]
            KTr = K[:, :nT, nT:]
            KrT = K[:, nT:, :nT]
            Krr = K[:, nT:, nT:]
            rT = ru[grp.dofs[:, :nT]]
            sol = np.linalg.solve(KTT, np.concatenate([KTr, rT[:, :, None]], axis=2))
            X, y = sol[:, :, :-1], sol[:, :, -1]
            S = Krr - KrT @ X
            corr = np.einsum("crt,ct->cr", KrT, y)
            valid = gidx >= 0
            np.add.at(rhs, gidx[valid], -corr[valid])
            rows.append(grows)
            cols.append(gcols)
            vals.append(S.reshape(nc, nr * nr).ravel()[mask])
            saved.append((X, y))
        A = sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(cond.n, cond.n),
        )
        x = self._linear_solve(A, rhs)
        du = np.zeros(space.n_u)
        du[cond.free_faces] = x[: cond.n_face]
        dp = x[cond.p_offset : cond.p_offset + space.n_p]
        dl = x[-1] if self.multiplier else 0.0
        for grp, (gidx, _, _, _), (X, y) in zip(space.groups, cond.groups, saved):
            xr = np.where(gidx >= 0, x[np.maximum(gidx, 0)], 0.0)
            du[grp.dofs[:, :nT]] = y - np.einsum("ctr,cr->ct", X, xr)
        return du, dp, dl

    def _linear_solve(self, A, b):
        """Sparse LU with a fill-reducing ordering cached per matrix size.

        The sparsity pattern is fixed for a discretization, so the AMD
        ordering of ``A + A^T`` is computed once and SuperLU runs in
        symmetric mode on the permuted matrix.
        """
        A = A.tocsc()
        n = A.shape[0]
        perm = self._orderings.get(n) if self.config.ordering == "amd" else None
        if perm is None and self.config.ordering == "amd":
            perm = amd_ordering(A)
            self._orderings[n] = perm
        try:
            if perm is None:
                lu = spla.splu(A)
                x = lu.solve(b)
            else:
                lu = spla.splu(
                    A[perm][:, perm].tocsc(),
                    permc_spec="NATURAL",
                    diag_pivot_thresh=0.1,
                    options=dict(SymmetricMode=True),
                )
                x = np.empty_like(b)
                x[perm] = lu.solve(b[perm])
        except RuntimeError as exc:
            raise SolverError(f"singular linear system: {exc}") from exc
        if not np.all(np.isfinite(x)):
            raise SolverError("linear solve produced non-finite values")
        return x

    # -- data helpers ------------------------------------------------------------

    def boundary_values(self, func, order=None) -> np.ndarray:
        """``pi^k_F`` of ``func`` on boundary faces, zero elsewhere."""
        space = self.space
        u = np.zeros(space.n_u)
        mesh = self.mesh
        from .basis import face_quadrature

        for f in mesh.boundary_faces:
            a, b = mesh.vertices[mesh.faces[f]]
            q = face_quadrature(a, b, order or space.quad_order)
            psi = space.face_basis(f).values(q.points)
            M = (psi * q.weights[:, None]).T @ psi
            vals = np.asarray(func(q.points), dtype=float)
            coef = np.linalg.solve(M, (psi * q.weights[:, None]).T @ vals)
            u[space.face_dofs(f)] = coef.T.ravel()
        return u

    def step_loads(self, data: ProblemData, t0, t1):
        """Averaged loads and boundary datum on ``(t0, t1)``."""
        loads = self.loads
        nq = self.config.time_quad
        ts, ws = gauss_times(t0, t1, nq)
        fvec = np.zeros(self.space.n_u)
        gvec = np.zeros(self.space.n_p)
        bvals = None
        for t, w in zip(ts, ws):
            if data.f is not None:
                fvec += w * loads.displacement_load(lambda x: data.f(x, t))
            if data.g is not None:
                gvec += w * loads.pressure_load(lambda x: data.g(x, t))
            if data.flux is not None:
                gvec += w * loads.boundary_flux_load(lambda x, n: data.flux(x, n, t))
            if data.dirichlet is not None:
                bv = self.boundary_values(lambda x: data.dirichlet(x, t))
                bvals = w * bv if bvals is None else bvals + w * bv
        return fvec, gvec, bvals

    def fluid_content(self, state: SystemState) -> np.ndarray:
        return self.config.c0 * (self.M @ state.p) - self.B @ state.u

    # -- driver --------------------------------------------------------------------

    def initialize_state(self, data: ProblemData, mode="default", f0=None, u0_dirichlet=None):
        """State at ``t = 0``.

        ``default`` stores the projected initial fluid content with zero
        displacement and ``p = pi phi0 / C0`` (zero if ``C0 = 0``).
        ``explicit`` solves the coupled stationary problem with load ``f0``.
        ``reduced`` (``C0 > 0`` only) solves the equivalent elasticity
        problem with the modified law ``sigma + C0^-1 tr(.) I``.
        """
        space = self.space
        c0 = self.config.c0
        phi_vec = np.zeros(space.n_p)
        phi_coef = np.zeros(space.n_p)
        if data.phi0 is not None:
            phi_vec = self.loads.pressure_load(data.phi0)
            phi_coef = space.project_pressure(data.phi0)
        if c0 == 0 and abs(self.mean @ phi_coef) > 1e-11 * max(1.0, np.abs(phi_coef).max()):
            if mode != "default":
                raise SolverError("incompatible initial fluid content: its mean must vanish when C0 = 0")
        u = np.zeros(space.n_u)
        if u0_dirichlet is not None:
            u += self.boundary_values(u0_dirichlet)
        p = phi_coef / c0 if c0 > 0 else np.zeros(space.n_p)
        state = SystemState(u, p, 0, 0.0)
        if mode == "default":
            state.fluid = phi_vec
            return state
        fvec = np.zeros(space.n_u) if f0 is None else self.loads.displacement_load(f0)
        if mode == "explicit":
            self.solve_newton_step(state, fvec, phi_vec, 0.0)
        elif mode == "reduced":
            if c0 <= 0:
                raise ValueError("reduced initialization needs C0 > 0")
            law = ShiftedTraceLaw(self.config.law, c0)
            rhs = fvec - (self.B.T @ phi_coef) / c0
            self.solve_elasticity(state, rhs, law)
            trG = np.zeros(space.n_p)
            for c in range(self.mesh.n_cells):
                g = space.sym_gradient(c, state.u[space.local_dofs(c)])
                trG[space.pressure_dofs(c)] = g[0] + g[1]
            state.p = (phi_coef - trG) / c0
        else:
            raise ValueError(f"unknown initialization mode {mode!r}")
        state.fluid = self.fluid_content(state)
        return state

    def solve_elasticity(self, state: SystemState, fvec, law):
        """Newton on ``a_h(u, v) = fvec(v)`` (free displacement dofs only)."""
        free = self.space.free
        ref = None
        for it in range(self.config.newton_max + 1):
            local = elasticity_local(self.space, state.u, law, self.gamma, True)
            r = np.zeros(self.space.n_u)
            for grp, (res, _) in zip(self.space.groups, local):
                np.add.at(r, grp.dofs.ravel(), res.ravel())
            r = (r - fvec)[free]
            rn = np.linalg.norm(r)
            ref = max(rn, np.linalg.norm(fvec[free])) if ref is None else ref
            if rn <= self.config.newton_tol * ref or ref == 0:
                state.newton_iterations = it
                return it
            J = _scatter_matrix(self.space, [j for _, j in local], self.space.n_u)[free][:, free]
            state.u[free] -= self._linear_solve(J.tocsc(), r)
        raise NewtonError("elasticity Newton did not converge", [])

    def time_step(self, prev: SystemState, data: ProblemData, tau: float) -> SystemState:
        t0 = prev.time
        t1 = t0 + tau
        fvec, gvec, bvals = self.step_loads(data, t0, t1)
        state = prev.copy()
        state.step = prev.step + 1
        state.time = t1
        if bvals is not None:
            fixed = self.space.fixed
            state.u[fixed] = bvals[fixed]
        fluid_prev = prev.fluid if prev.fluid is not None else self.fluid_content(prev)
        flow_rhs = fluid_prev + tau * gvec
        self.solve_newton_step(state, fvec, flow_rhs, tau)
        state.fluid = self.fluid_content(state)
        return state

    def run_transient(self, data: ProblemData, grid: TimeGrid, init_mode="default", f0=None, callback=None):
        start = time.perf_counter()
        state = self.initialize_state(
            data,
            init_mode,
            f0=f0,
            u0_dirichlet=None if data.dirichlet is None else (lambda x: data.dirichlet(x, 0.0)),
        )
        states = [state]
        tau = grid.tau
        energy_u = energy_p = storage = 0.0
        s_N = np.zeros(self.space.n_p)
        iters = []
        for n in range(1, grid.steps + 1):
            state = self.time_step(state, data, tau)
            states.append(state)
            iters.append(state.newton_iterations)
            energy_u += tau * self.space.strain_seminorm(state.u) ** 2
            area = self.mesh.total_measure()
            pm = state.p.copy()
            mean = self.mean @ pm / area
            pm_l2 = pm @ (self.M @ pm) - area * mean**2
            energy_p += tau * max(pm_l2, 0.0)
            storage += tau * self.config.c0 * (state.p @ (self.M @ state.p))
            s_N += tau * state.p
            if callback is not None:
                callback(state)
        diagnostics = {
            "sum_tau_strain2": energy_u,
            "sum_tau_pressure_dev2": energy_p,
            "sum_tau_c0_pressure2": storage,
            "s_N_c_norm": float(np.sqrt(max(s_N @ (self.C @ s_N), 0.0))),
            "newton_iterations": iters,
            "newton_avg": float(np.mean(iters)) if iters else 0.0,
            "max_abs_multiplier": max(abs(s.multiplier) for s in states),
            "seconds": time.perf_counter() - start,
        }
        meta = self.metadata()
        meta.update(tau=tau, steps=grid.steps, t_final=grid.t_final)
        return Trajectory(states, grid, diagnostics, meta)


class ShiftedTraceLaw(StressLaw):
    """``sigma(tau) + C0^-1 tr(tau) I``."""

    kind = "shifted"

    def __init__(self, base: StressLaw, c0: float):
        self.base = base
        self.c0 = c0

    def stress(self, tau, x=None):
        tau = np.asarray(tau)
        tr = np.trace(tau, axis1=-2, axis2=-1)
        return self.base.stress(tau, x) + (tr / self.c0)[..., None, None] * np.eye(tau.shape[-1])

    def tangent(self, tau, x=None):
        d = np.asarray(tau).shape[-1]
        eye = np.eye(d)
        return self.base.tangent(tau, x) + np.einsum("ij,kl->ijkl", eye, eye) / self.c0


def zero_mean_augment(A: sp.spmatrix, mean_vec, offset: int):
    """Append the multiplier row/column ``int p = 0`` to a saddle-point matrix.

    ``offset`` is the index of the first pressure unknown in ``A``.
    """
    n = A.shape[0]
    col = np.zeros(n)
    col[offset : offset + len(mean_vec)] = mean_vec
    c = sp.csr_matrix(col[:, None])
    return sp.bmat([[A, c], [c.T, None]], format="csr")
