"""Command-line entry point: ``hhobiot run|converge|check``."""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .constitutive import make_law, recommended_gamma
from .mesh import MeshError, bundled_voronoi_levels, generate_cartesian, load_mesh
from .solver import BiotDiscretization, SolverConfig, SolverError, TimeGrid
from .verification import (
    build_case_nl_biot_2d,
    convergence_study,
    error_norms,
    rows_to_csv,
    cartesian_schedule,
    rows_to_table,
    time_steps_for_levels,
)

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("hhobiot")


class UsageError(Exception):
    pass


DEFAULTS = {
    "mesh": "cartesian",
    "n": "16",
    "n0": "8",
    "degree": "1",
    "t_final": "1.0",
    "steps": "",
    "c0": "0.0",
    "kappa": "1.0",
    "law": "hencky_mises",
    "lam": "1.0",
    "mu": "1.0",
    "gamma": "",
    "varsigma": "",
    "newton_tol": "1e-10",
    "newton_max": "25",
    "condense": "on",
    "levels": "3",
    "out": "",
}


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` comments; no section header needed."""
    text = Path(path).read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.read_string("[run]\n" + text)
    cfg = dict(parser["run"])
    unknown = set(cfg) - set(DEFAULTS)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return cfg


def _parse_kappa(text):
    """Scalar, ``a b c d`` (2x2) or ``region:value; region:value``."""
    text = text.strip()
    if ":" in text:
        out = {}
        for part in text.split(";"):
            if part.strip():
                r, v = part.split(":")
                out[int(r)] = _parse_kappa(v)
        return out
    vals = [float(v) for v in text.replace(",", " ").split()]
    if len(vals) == 1:
        return vals[0]
    if len(vals) == 4:
        return np.array(vals).reshape(2, 2)
    raise UsageError(f"cannot parse kappa {text!r}")


def _opt_float(v):
    return None if v in ("", None) else float(v)


def _settings(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            cfg.update(read_config(args.config))
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}")
        except configparser.Error as exc:
            raise UsageError(f"bad config file: {exc}")
    for key in ("mesh", "degree", "levels", "out"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = str(val)
    return cfg


def _mesh_family(spec: str, levels: int, n0: int):
    if spec == "cartesian":
        return [generate_cartesian(n0 * 2**i) for i in range(levels)]
    if spec == "voronoi":
        paths = bundled_voronoi_levels()
        if levels > len(paths):
            raise UsageError(f"only {len(paths)} bundled Voronoi levels")
        return [load_mesh(p) for p in paths[:levels]]
    path = Path(spec)
    if not path.exists():
        raise UsageError(f"mesh file not found: {spec}")
    return [load_mesh(path)]


def _solver_config(cfg, law) -> SolverConfig:
    return SolverConfig(
        c0=float(cfg["c0"]),
        kappa=_parse_kappa(cfg["kappa"]),
        law=law,
        gamma=_opt_float(cfg["gamma"]),
        varsigma=_opt_float(cfg["varsigma"]),
        newton_tol=float(cfg["newton_tol"]),
        newton_max=int(cfg["newton_max"]),
        condense=cfg["condense"].lower() in ("on", "true", "yes", "1"),
    )


def _law(cfg):
    kind = cfg["law"]
    try:
        return make_law(kind, lam=float(cfg["lam"]), mu=float(cfg["mu"]))
    except ValueError as exc:
        raise UsageError(str(exc))


def _emit(text, cfg):
    if cfg["out"]:
        Path(cfg["out"]).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    cfg = _settings(args)
    case = build_case_nl_biot_2d(c0=float(cfg["c0"]))
    law = _law(cfg)
    k = int(cfg["degree"])
    mesh = _mesh_family(cfg["mesh"], 1, int(cfg["n"]))[0]
    if cfg["steps"]:
        steps = int(cfg["steps"])
    elif cfg["mesh"] == "cartesian":
        n = int(cfg["n"])
        steps = cartesian_schedule(1, k, n0=n, t_final=float(cfg["t_final"]))[1][0]
    else:
        steps = time_steps_for_levels([mesh.h], k, float(cfg["t_final"]))[0]
    scfg = _solver_config(cfg, law)
    disc = BiotDiscretization(mesh, k, scfg)
    case.law = law
    traj = disc.run_transient(case.problem_data(), TimeGrid(float(cfg["t_final"]), steps))
    eu, ep = error_norms(traj, case, disc)
    meta = dict(traj.metadata, version=__version__)
    lines = [f"# {k_}: {v}" for k_, v in sorted(meta.items())]
    diag = {k_: v for k_, v in traj.diagnostics.items() if k_ != "newton_iterations"}
    lines.append("E_u,E_p," + ",".join(sorted(diag)))
    lines.append(f"{eu:.17g},{ep:.17g}," + ",".join(f"{diag[k_]:.17g}" for k_ in sorted(diag)))
    _emit("\n".join(lines) + "\n", cfg)
    return EXIT_OK


def cmd_converge(args) -> int:
    cfg = _settings(args)
    case = build_case_nl_biot_2d(c0=float(cfg["c0"]))
    case.law = _law(cfg)
    case.t_final = float(cfg["t_final"])
    k = int(cfg["degree"])
    levels = int(cfg["levels"])
    if levels < 1:
        raise UsageError("--levels must be positive")
    steps = None
    if cfg["mesh"] == "cartesian":
        # the coarsest level is n x n; tau is anchored at the 16 x 16 mesh
        meshes, steps = cartesian_schedule(levels, k, n0=int(cfg["n0"]), t_final=float(cfg["t_final"]))
    else:
        meshes = _mesh_family(cfg["mesh"], levels, int(cfg["n"]))
    if cfg["steps"]:
        steps = [int(cfg["steps"])] * levels
    overrides = {
        "gamma": _opt_float(cfg["gamma"]),
        "varsigma": _opt_float(cfg["varsigma"]),
        "newton_tol": float(cfg["newton_tol"]),
        "newton_max": int(cfg["newton_max"]),
        "condense": cfg["condense"].lower() in ("on", "true", "yes", "1"),
    }
    case.kappa = _parse_kappa(cfg["kappa"])
    if args.verbose:
        progress = lambda r: print(f"level h={r.h:.3e} done in {r.seconds:.1f}s", file=sys.stderr)
    else:
        progress = None
    try:
        rows, meta = convergence_study(case, meshes, k, steps=steps, config_overrides=overrides, log=progress)
    except (SolverError, ArithmeticError) as exc:
        rows = getattr(exc, "partial_rows", [])
        if rows:
            print(rows_to_table(rows), file=sys.stderr)
        raise
    meta = dict(meta, version=__version__, levels=levels, mesh_family=cfg["mesh"])
    head = "".join(f"# {key}: {meta[key]}\n" for key in sorted(meta))
    body = rows_to_csv(rows) if args.format == "csv" else rows_to_table(rows) + "\n"
    _emit(head + body, cfg)
    return EXIT_OK


def cmd_check(args) -> int:
    """Quick battery: coercivity of the linearized operator, SWIP
    coercivity, condensation equivalence and the Fortin identity."""
    from .assembly import assemble_coupling, assemble_elasticity
    from .hho import HHOSpace

    cfg = _settings(args)
    law = _law(cfg)
    k = int(cfg["degree"])
    mesh = _mesh_family(cfg["mesh"], 1, min(int(cfg["n"]), 8))[0]
    space = HHOSpace(mesh, k)
    failures = []
    gamma = _opt_float(cfg["gamma"])
    try:
        gamma = recommended_gamma(law, gamma)
    except ValueError as exc:
        failures.append(f"gamma: {exc}")
        gamma = 0.0
    print(f"# law: {law.describe()}\n# gamma: {gamma}\n# k: {k}\n# h: {mesh.h}")

    _, J = assemble_elasticity(space, np.zeros(space.n_u), law, gamma)
    free = space.free
    A = space.strain_matrix()[free][:, free].toarray()
    Jf = J[free][:, free].toarray()
    import scipy.linalg as sla

    ev = sla.eigh(0.5 * (Jf + Jf.T), A, eigvals_only=True, subset_by_index=[0, 0])[0]
    ok = ev > 1e-8
    print(f"{'PASS' if ok else 'FAIL'} linearized coercivity: min eig {ev:.3e}")
    if not ok:
        failures.append("coercivity")

    try:
        disc = BiotDiscretization(mesh, k, _solver_config(cfg, law), space)
        print(f"PASS SWIP coercivity: min eig {disc.coercivity:.3e}")
    except (SolverError, ValueError) as exc:
        print(f"FAIL discretization: {exc}")
        failures.append("swip")
        disc = None

    B = assemble_coupling(space)
    one = np.zeros(space.n_p)
    one[:: space.nk] = 1.0
    rnd = np.random.default_rng(0).normal(size=space.n_u)
    rnd[space.fixed] = 0.0
    val = abs(one @ (B @ rnd))
    ok = val < 1e-13 * max(1.0, np.linalg.norm(rnd))
    print(f"{'PASS' if ok else 'FAIL'} b_h(v, 1) = 0: {val:.2e}")
    if not ok:
        failures.append("b_h(v,1)")

    if disc is not None:
        case = build_case_nl_biot_2d(c0=float(cfg["c0"]))
        data = case.problem_data()
        a = disc.run_transient(data, TimeGrid(1.0, 2)).states[-1]
        disc.config.condense = not disc.config.condense
        b = disc.run_transient(data, TimeGrid(1.0, 2)).states[-1]
        diff = max(np.abs(a.u - b.u).max() / max(np.abs(a.u).max(), 1e-300),
                   np.abs(a.p - b.p).max() / max(np.abs(a.p).max(), 1e-300))
        ok = diff < 1e-10
        print(f"{'PASS' if ok else 'FAIL'} condensation equivalence: {diff:.2e}")
        if not ok:
            failures.append("condensation")
    return EXIT_OK if not failures else EXIT_CHECK


def build_parser():
    p = argparse.ArgumentParser(prog="hhobiot", description="HHO solver for nonlinear poroelasticity")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value settings file")
        sp.add_argument("--mesh", help="cartesian, voronoi or a mesh file path")
        sp.add_argument("--degree", type=int, help="polynomial degree k >= 1")
        sp.add_argument("--out", help="write results to this file")
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("run", help="single transient solve of the manufactured case"))
    c = sub.add_parser("converge", help="convergence study with coupled time refinement")
    common(c)
    c.add_argument("--levels", type=int, help="number of refinement levels")
    c.add_argument("--format", choices=["csv", "table"], default="table")
    common(sub.add_parser("check", help="property-check battery"))
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if getattr(args, "degree", None) is not None and args.degree < 1:
        print("error: --degree must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    handler = {"run": cmd_run, "converge": cmd_converge, "check": cmd_check}[args.command]
    try:
        return handler(args)
    except (UsageError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
