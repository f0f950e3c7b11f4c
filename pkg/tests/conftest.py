import numpy as np
import pytest

from hhobiot.hho import HHOSpace
from hhobiot.mesh import PolyMesh, bundled_voronoi_levels, generate_cartesian, load_mesh


def hexagon_mesh():
    """A regular hexagon surrounded by nothing: one cell, six faces."""
    ang = np.pi / 3 * np.arange(6)
    verts = 0.5 + 0.4 * np.c_[np.cos(ang), np.sin(ang)]
    return PolyMesh(verts, [list(range(6))], np.zeros(1, dtype=int))


def mixed_mesh():
    """Unit square split into a quad, a pentagon and two triangles."""
    verts = np.array(
        [[0, 0], [0.5, 0], [1, 0], [1, 0.6], [1, 1], [0.4, 1], [0, 1], [0, 0.5], [0.55, 0.45]]
    )
    cells = [
        [0, 1, 8, 7],
        [1, 2, 3, 8],
        [8, 3, 4, 5],
        [7, 8, 5, 6],
    ]
    return PolyMesh(verts, cells, np.array([0, 1, 0, 1]))


@pytest.fixture(scope="session")
def voronoi0():
    return load_mesh(bundled_voronoi_levels()[0])


@pytest.fixture(scope="session", params=["cartesian", "mixed", "voronoi"])
def any_mesh(request):
    if request.param == "cartesian":
        return generate_cartesian(3)
    if request.param == "mixed":
        return mixed_mesh()
    return load_mesh(bundled_voronoi_levels()[0])


@pytest.fixture(scope="session")
def spaces():
    cache = {}

    def get(mesh_name, k):
        key = (mesh_name, k)
        if key not in cache:
            mesh = {
                "cart3": lambda: generate_cartesian(3),
                "cart4": lambda: generate_cartesian(4),
                "mixed": mixed_mesh,
                "voronoi": lambda: load_mesh(bundled_voronoi_levels()[0]),
            }[mesh_name]()
            cache[key] = HHOSpace(mesh, k)
        return cache[key]

    return get


def smooth_vector(rng):
    """Random smooth vector field (trigonometric with random coefficients)."""
    a = rng.normal(size=(2, 3))
    w = rng.uniform(0.5, 2.0, size=(2, 2))

    def v(x):
        X, Y = x[..., 0], x[..., 1]
        comps = [
            a[i, 0] * np.sin(w[i, 0] * X + 0.3) * np.cos(w[i, 1] * Y) + a[i, 1] * X * Y + a[i, 2] * Y**2
            for i in range(2)
        ]
        return np.stack(comps, axis=-1)

    def grad(x):
        X, Y = x[..., 0], x[..., 1]
        rows = []
        for i in range(2):
            dx = a[i, 0] * w[i, 0] * np.cos(w[i, 0] * X + 0.3) * np.cos(w[i, 1] * Y) + a[i, 1] * Y
            dy = -a[i, 0] * w[i, 1] * np.sin(w[i, 0] * X + 0.3) * np.sin(w[i, 1] * Y) + a[i, 1] * X + 2 * a[i, 2] * Y
            rows.append(np.stack([dx, dy], axis=-1))
        return np.stack(rows, axis=-2)  # (..., 2, 2): d v_i / d x_j

    return v, grad


# -- acceptance report ---------------------------------------------------------

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def report():
    """``report(tag, ok, detail)`` prints a PASS/FAIL line now and in the summary."""

    def emit(tag, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} {tag}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
