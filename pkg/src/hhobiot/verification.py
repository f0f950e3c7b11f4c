"""Manufactured solutions, space-time error norms and convergence studies."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import sympy as sym

from .assembly import gauss_times
from .constitutive import StressLaw, exp_hencky_mises
from .hho import HHOSpace
from .mesh import PolyMesh, generate_cartesian
from .solver import BiotDiscretization, ProblemData, SolverConfig, TimeGrid, Trajectory

CSV_COLUMNS = ["h", "E_u", "OCV_u", "E_p", "OCV_p", "newton_avg", "seconds"]


@dataclass
class ManufacturedCase:
    """Exact fields and the data inferred from them.

    Callables take points of shape ``(..., 2)`` and a time ``t``.  When the
    exact fields factor as ``a(t) U(x)`` and ``b(t) P(x)`` the factors are
    stored too, which makes the error evaluation much cheaper.
    """

    name: str
    u: Callable
    p: Callable
    f: Callable
    g: Callable
    flux: Callable
    law: StressLaw
    c0: float = 0.0
    kappa: float = 1.0
    t_final: float = 1.0
    phi0: Callable | None = None
    u_factors: tuple | None = None
    p_factors: tuple | None = None
    symbols: dict = field(default_factory=dict, repr=False)

    def problem_data(self) -> ProblemData:
        return ProblemData(f=self.f, g=self.g, flux=self.flux, phi0=self.phi0)


def _vectorize(expr, args):
    fn = sym.lambdify(args, expr, modules="numpy", cse=True)

    def call(*vals):
        out = fn(*vals)
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(*vals).shape).copy()

    return call


def build_case_nl_biot_2d(c0: float = 0.0) -> ManufacturedCase:
    """Smooth solution on the unit square with the exponential Hencky-Mises law.

    ``u = t^2 (s, s)`` with ``s = sin(pi x) sin(pi y)`` and
    ``p = -t (sin(pi x) cos(pi y) + cos(pi x) sin(pi y)) / pi``, ``kappa = I``.
    ``u`` vanishes on the boundary; ``p`` has a nonzero normal flux.
    """
    x, y, t = sym.symbols("x y t", real=True)
    pi = sym.pi
    s = sym.sin(pi * x) * sym.sin(pi * y)
    U = sym.Matrix([s, s])
    P = -(sym.sin(pi * x) * sym.cos(pi * y) + sym.cos(pi * x) * sym.sin(pi * y)) / pi
    u = t**2 * U
    p = t * P
    X = [x, y]
    eps = sym.Matrix(2, 2, lambda i, j: (sym.diff(u[i], X[j]) + sym.diff(u[j], X[i])) / 2)
    tr = eps.trace()
    rho = sum(eps[i, j] ** 2 for i in range(2) for j in range(2)) - tr**2 / 2
    lam = 1 + sym.exp(-rho)
    two_mu = 4 - 2 * sym.exp(-rho)
    sigma = lam * tr * sym.eye(2) + two_mu * eps
    f = sym.Matrix(
        [-sum(sym.diff(sigma[i, j], X[j]) for j in range(2)) + sym.diff(p, X[i]) for i in range(2)]
    )
    div_u = sym.diff(u[0], x) + sym.diff(u[1], y)
    lap_p = sym.diff(p, x, 2) + sym.diff(p, y, 2)
    g = c0 * sym.diff(p, t) + sym.diff(div_u, t) - lap_p
    grad_p = [sym.diff(p, x), sym.diff(p, y)]

    args = (x, y, t)
    f0, f1 = _vectorize(f[0], args), _vectorize(f[1], args)
    g_fn = _vectorize(g, args)
    u_fn = _vectorize(u[0], args)  # both components are equal
    p_fn = _vectorize(p, args)
    gx, gy = _vectorize(grad_p[0], args), _vectorize(grad_p[1], args)
    U_fn = _vectorize(U[0], (x, y))
    P_fn = _vectorize(P, (x, y))

    def u_exact(pts, tt):
        v = u_fn(pts[..., 0], pts[..., 1], tt)
        return np.stack([v, v], axis=-1)

    return ManufacturedCase(
        name="nl_biot_2d",
        u=u_exact,
        p=lambda pts, tt: p_fn(pts[..., 0], pts[..., 1], tt),
        f=lambda pts, tt: np.stack(
            [f0(pts[..., 0], pts[..., 1], tt), f1(pts[..., 0], pts[..., 1], tt)], axis=-1
        ),
        g=lambda pts, tt: g_fn(pts[..., 0], pts[..., 1], tt),
        flux=lambda pts, n, tt: gx(pts[..., 0], pts[..., 1], tt) * n[..., 0]
        + gy(pts[..., 0], pts[..., 1], tt) * n[..., 1],
        law=exp_hencky_mises(),
        c0=c0,
        kappa=1.0,
        t_final=1.0,
        phi0=None,
        u_factors=(
            lambda tt: tt**2,
            lambda pts: np.stack([U_fn(pts[..., 0], pts[..., 1])] * 2, axis=-1),
        ),
        p_factors=(lambda tt: tt, lambda pts: P_fn(pts[..., 0], pts[..., 1])),
        symbols={"u": u, "p": p, "sigma": sigma, "f": f, "g": g, "vars": (x, y, t)},
    )


def strong_residual_check(case: ManufacturedCase, n_points=20, seed=0, h=1e-3) -> float:
    """Max relative residual of the momentum balance with finite differences.

    Uses the law object (not the symbolic derivation) to compute stresses,
    so it cross-checks both.  Central differences at ``h`` and ``h/2`` are
    Richardson-extrapolated to fourth order.
    """
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.1, 0.9, size=(n_points, 2))
    ts = rng.uniform(0.1, 1.0, size=n_points)
    unit = np.eye(2)

    def strain(x, tt, d):
        J = np.stack([(case.u(x + d * e, tt) - case.u(x - d * e, tt)) / (2 * d) for e in unit], axis=1)
        return 0.5 * (J + J.T)

    def residual(x, tt, d):
        div = np.zeros(2)
        for j, e in enumerate(unit):
            sp_ = case.law.stress(strain(x + d * e, tt, d)[None])[0]
            sm = case.law.stress(strain(x - d * e, tt, d)[None])[0]
            div += (sp_[:, j] - sm[:, j]) / (2 * d)
        gp = np.array([(case.p(x + d * e, tt) - case.p(x - d * e, tt)) / (2 * d) for e in unit])
        return -div + gp - case.f(x, tt)

    worst = 0.0
    for x, tt in zip(pts, ts):
        res = (4 * residual(x, tt, h / 2) - residual(x, tt, h)) / 3
        scale = max(1.0, np.abs(case.f(x, tt)).max())
        worst = max(worst, float(np.abs(res).max() / scale))
    return worst


# -- error measures -----------------------------------------------------------


def _time_factor_average(a, t0, t1, nq):
    ts, ws = gauss_times(t0, t1, nq)
    return sum(w * a(t) for t, w in zip(ts, ws))


def error_norms(traj: Trajectory, case: ManufacturedCase, disc: BiotDiscretization, sample_order=None):
    """``(E_u, E_p)`` against time-averaged exact fields.

    ``E_u^2 = sum_n tau |u_h^n - I_h u_bar^n|_eps^2`` and
    ``E_p^2 = sum_n tau ||p_h^n - pi_h p_bar^n||^2``, with the averages taken
    by the same Gauss rule in time as the loads.
    """
    space = disc.space
    order = sample_order if sample_order is not None else min(2 * space.k + 6, 20)
    nq = disc.config.time_quad
    tau = traj.grid.tau
    M = disc.M
    if case.u_factors is not None and case.p_factors is not None:
        a, U = case.u_factors
        b, P = case.p_factors
        IU = space.interpolate(U, order)
        PP = space.project_pressure(P, order)
        ubar = lambda t0, t1: _time_factor_average(a, t0, t1, nq) * IU
        pbar = lambda t0, t1: _time_factor_average(b, t0, t1, nq) * PP
    else:
        def ubar(t0, t1):
            ts, ws = gauss_times(t0, t1, nq)
            return sum(w * space.interpolate(lambda x: case.u(x, t), order) for t, w in zip(ts, ws))

        def pbar(t0, t1):
            ts, ws = gauss_times(t0, t1, nq)
            return sum(w * space.project_pressure(lambda x: case.p(x, t), order) for t, w in zip(ts, ws))

    eu2 = ep2 = 0.0
    for prev, st in zip(traj.states[:-1], traj.states[1:]):
        du = st.u - ubar(prev.time, st.time)
        dp = st.p - pbar(prev.time, st.time)
        eu2 += tau * space.strain_seminorm(du) ** 2
        ep2 += tau * float(dp @ (M @ dp))
    return math.sqrt(eu2), math.sqrt(ep2)


# -- convergence -----------------------------------------------------------------


@dataclass
class ConvergenceRow:
    h: float
    E_u: float
    OCV_u: float | None
    E_p: float
    OCV_p: float | None
    newton_avg: float
    seconds: float
    steps: int = 0
    n_cells: int = 0

    def as_dict(self):
        return {c: getattr(self, c) for c in CSV_COLUMNS}


def ocv(e0, e1, h0, h1):
    return math.log(e0 / e1) / math.log(h0 / h1)


def time_steps_for_levels(hs, k, t_final=1.0, tau0=None):
    """Step counts with ``tau_0 = 0.2 / 2^(k+1)`` and ``tau_l / tau_{l+1} = 2^k h_l / h_{l+1}``."""
    tau = 0.2 / 2 ** (k + 1) if tau0 is None else tau0
    out = []
    for i, h in enumerate(hs):
        if i > 0:
            tau /= 2**k * hs[i - 1] / h
        out.append(max(1, int(round(t_final / tau))))
    return out


def cartesian_family(levels, n0=8):
    return [generate_cartesian(n0 * 2**i) for i in range(levels)]


def cartesian_schedule(levels, k=1, n0=8, n_ref=16, t_final=1.0):
    """Meshes and step counts for the Cartesian study.

    The ``n_ref x n_ref`` mesh gets ``tau = 0.2 / 2^(k+1)`` and each
    halving of ``h`` divides ``tau`` by ``2^(k+1)``, so coarser levels
    extend the same schedule downward.
    """
    meshes, steps = [], []
    for i in range(levels):
        n = n0 * 2**i
        tau = 0.2 / 2 ** (k + 1) * (n_ref / n) ** (k + 1)
        meshes.append(generate_cartesian(n))
        steps.append(max(1, int(round(t_final / min(tau, t_final)))))
    return meshes, steps


def convergence_study(
    case: ManufacturedCase,
    meshes: list[PolyMesh],
    k: int = 1,
    steps: list[int] | None = None,
    tau0=None,
    config_overrides: dict | None = None,
    log: Callable | None = None,
):
    """Run each level and return ``(rows, metadata)``.

    A failing level raises; rows for completed levels are attached to the
    exception as ``partial_rows``.
    """
    hs = [m.h for m in meshes]
    if steps is None:
        steps = time_steps_for_levels(hs, k, case.t_final, tau0)
    rows: list[ConvergenceRow] = []
    meta = {}
    for lvl, (mesh, nsteps) in enumerate(zip(meshes, steps)):
        start = time.perf_counter()
        cfg = SolverConfig(c0=case.c0, kappa=case.kappa, law=case.law, **(config_overrides or {}))
        try:
            disc = BiotDiscretization(mesh, k, cfg)
            traj = disc.run_transient(case.problem_data(), TimeGrid(case.t_final, nsteps))
            eu, ep = error_norms(traj, case, disc)
        except Exception as exc:
            exc.partial_rows = rows
            raise
        if not meta:
            meta = disc.metadata()
        elapsed = time.perf_counter() - start
        prev = rows[-1] if rows else None
        row = ConvergenceRow(
            h=mesh.h,
            E_u=eu,
            OCV_u=None if prev is None else ocv(prev.E_u, eu, prev.h, mesh.h),
            E_p=ep,
            OCV_p=None if prev is None else ocv(prev.E_p, ep, prev.h, mesh.h),
            newton_avg=traj.diagnostics["newton_avg"],
            seconds=elapsed,
            steps=nsteps,
            n_cells=mesh.n_cells,
        )
        rows.append(row)
        if log is not None:
            log(row)
    return rows, meta


def _fmt(v, digits=17):
    if v is None:
        return ""
    return f"{v:.{digits}g}"


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(v) for v in (r.h, r.E_u, r.OCV_u, r.E_p, r.OCV_p, r.newton_avg, r.seconds)])
    return buf.getvalue()


def rows_to_table(rows) -> str:
    head = f"{'h':>10} {'E_u':>10} {'OCV':>6} {'E_p':>10} {'OCV':>6} {'newton':>7} {'steps':>6} {'sec':>8}"
    lines = [head, "-" * len(head)]
    for r in rows:
        ou = "---" if r.OCV_u is None else f"{r.OCV_u:.2f}"
        op = "---" if r.OCV_p is None else f"{r.OCV_p:.2f}"
        lines.append(
            f"{r.h:10.2e} {r.E_u:10.2e} {ou:>6} {r.E_p:10.2e} {op:>6} "
            f"{r.newton_avg:7.2f} {r.steps:6d} {r.seconds:8.1f}"
        )
    return "\n".join(lines)


# -- stability diagnostics -----------------------------------------------------------


def inf_sup_constant(space: HHOSpace) -> float:
    """Discrete inf-sup constant of ``b_h`` on ``U_{h,D} x P_0``.

    Smallest nonzero ``beta`` with ``B A^-1 B^T q = beta^2 M q`` where ``A``
    is the strain-seminorm matrix on free dofs and ``M`` the pressure mass.
    The constant pressures (the only kernel of ``B^T``) are projected out.
    """
    from .assembly import assemble_coupling

    free = space.free
    A = space.strain_matrix()[free][:, free].tocsc()
    B = assemble_coupling(space)[:, free]
    lu = spla.splu(A)
    BT = B.T.toarray()
    S = B @ lu.solve(BT)
    M = space.pressure_mass().toarray()
    m = space.mean_vector()
    # basis of the M-orthogonal complement of constants
    Q = sla.null_space(m[None, :])
    Sr = Q.T @ S @ Q
    Mr = Q.T @ M @ Q
    ev = sla.eigh(0.5 * (Sr + Sr.T), Mr, eigvals_only=True, subset_by_index=[0, 0])
    return float(np.sqrt(max(ev[0], 0.0)))


def korn_constant(space: HHOSpace) -> float:
    """``max ||v||_Omega / |v|_eps`` over the free displacement dofs."""
    free = space.free
    A = space.strain_matrix()[free][:, free].tocsc()
    Mc = sp.block_diag([sp.kron(sp.eye(2), sp.csr_matrix(op.mass)) for op in space.ops])
    n_face = space.n_u - space.n_cell_dofs
    Mu = sp.block_diag([Mc, sp.csr_matrix((n_face, n_face))]).tocsr()[free][:, free]
    lu = spla.splu(A)
    op = spla.LinearOperator(A.shape, matvec=lambda v: lu.solve(Mu @ v))
    ev = spla.eigs(op, k=1, which="LM", return_eigenvectors=False)
    return float(np.sqrt(abs(ev[0].real)))


def seminorm_equivalence(space: HHOSpace) -> tuple[float, float]:
    """Extreme generalized eigenvalues of the ``|G v|^2 + |Delta v|^2/h`` local
    block against the local strain block, over all distinct cell shapes."""
    lo, hi = np.inf, 0.0
    seen = set()
    for op in space.ops:
        if id(op) in seen:
            continue
        seen.add(id(op))
        S = op.strain
        A = op.G_norm + op.stab
        w, V = np.linalg.eigh(S)
        keep = w > 1e-10 * w.max()
        Vr = V[:, keep] / np.sqrt(w[keep])
        ev = np.linalg.eigvalsh(Vr.T @ A @ Vr)
        lo, hi = min(lo, ev.min()), max(hi, ev.max())
    return float(lo), float(hi)
