import math

import numpy as np
import pytest

from hhobiot.mesh import (
    MeshError,
    PolyMesh,
    bundled_voronoi_levels,
    generate_cartesian,
    load_mesh,
    save_mesh,
    subtriangulate,
    validate_regularity,
)

from conftest import hexagon_mesh, mixed_mesh


def _shoelace(xy):
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


@pytest.mark.parametrize("n, interior, boundary", [(1, 0, 4), (2, 4, 8), (5, 40, 20)])
def test_cartesian_counts(n, interior, boundary):
    m = generate_cartesian(n)
    assert m.n_cells == n * n
    assert len(m.interior_faces) == interior
    assert len(m.boundary_faces) == boundary
    assert m.h == pytest.approx(math.sqrt(2) / n, rel=1e-14)


def test_cartesian_rejects_zero():
    with pytest.raises(ValueError):
        generate_cartesian(0)


def test_load_2x2_file(tmp_path):
    path = tmp_path / "sq.mesh"
    save_mesh(generate_cartesian(2), path)
    m = load_mesh(path)
    assert (m.n_cells, m.n_faces, len(m.interior_faces), len(m.boundary_faces)) == (4, 12, 4, 8)


def test_nonmanifold_face_rejected(tmp_path):
    # three triangles share the edge 0-1
    text = """polymesh 2d
vertices 5
0 0
1 0
0.5 1
0.5 -1
0.5 0.5
cells 3
3 0 1 2 0
3 1 0 3 0
3 0 1 4 0
"""
    path = tmp_path / "bad.mesh"
    path.write_text(text)
    with pytest.raises(MeshError):
        load_mesh(path)


def test_parse_error_reports_line(tmp_path):
    path = tmp_path / "bad.mesh"
    path.write_text("polymesh 2d\nvertices 2\n0 0\n1 oops\ncells 0\n")
    with pytest.raises(MeshError, match=r"bad\.mesh:4:"):
        load_mesh(path)


def test_degenerate_and_clockwise_cells():
    verts = np.array([[0, 0], [1, 0], [2, 0], [0, 1.0]])
    with pytest.raises(MeshError):
        PolyMesh(verts, [[0, 1, 2]], np.zeros(1, dtype=int))
    with pytest.raises(MeshError):
        PolyMesh(verts, [[0, 3, 1]], np.zeros(1, dtype=int))


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_mesh("/nonexistent/file.mesh")


def test_roundtrip_preserves_geometry(tmp_path, voronoi0):
    path = tmp_path / "v.mesh"
    save_mesh(voronoi0, path)
    again = load_mesh(path)
    assert np.array_equal(again.faces, voronoi0.faces)
    assert all(np.array_equal(a, b) for a, b in zip(again.cells, voronoi0.cells))
    assert again.h == voronoi0.h


@pytest.mark.parametrize("mesh", [generate_cartesian(4), mixed_mesh(), hexagon_mesh()])
def test_mesh_invariants(mesh):
    assert mesh.total_measure() == pytest.approx(sum(_shoelace(g.vertices) for g in mesh.geometry), rel=1e-12)
    for g in mesh.geometry:
        # closed boundary: sum |F| n_TF = 0
        closure = (g.face_diameters[:, None] * g.face_normals).sum(axis=0)
        assert np.abs(closure).max() < 1e-12
        assert np.allclose(np.linalg.norm(g.face_normals, axis=1), 1.0)
        assert g.face_diameters.max() <= g.diameter + 1e-15
        # outward: normal points away from the centroid
        for j, f in enumerate(g.faces):
            mid = mesh.vertices[mesh.faces[f]].mean(axis=0)
            assert (mid - g.centroid) @ g.face_normals[j] > 0
    for f in mesh.interior_faces:
        c1, c2 = mesh.face_cells[f]
        g1, g2 = mesh.cell(c1), mesh.cell(c2)
        n1 = g1.face_normals[list(g1.faces).index(f)]
        n2 = g2.face_normals[list(g2.faces).index(f)]
        assert np.allclose(n1, -n2, atol=1e-14)


def test_boundary_perimeter(voronoi0):
    for mesh in (generate_cartesian(5), voronoi0):
        assert mesh.face_lengths()[mesh.boundary_faces].sum() == pytest.approx(4.0, rel=1e-12)
        assert mesh.total_measure() == pytest.approx(1.0, rel=1e-12)


def test_subtriangulate_square_and_hexagon():
    sq = generate_cartesian(1).cell(0)
    tris = subtriangulate(sq)
    areas = [abs(_shoelace(t)) for t in tris]
    assert len(tris) == 4 and np.allclose(areas, 0.25)
    hexa = hexagon_mesh().cell(0)
    tris = subtriangulate(hexa)
    assert len(tris) == 6
    assert sum(_shoelace(t) for t in tris) == pytest.approx(hexa.measure, rel=1e-13)


def test_subtriangulate_nonconvex_l_shape():
    verts = np.array([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2.0]])
    m = PolyMesh(verts, [list(range(6))], np.zeros(1, dtype=int))
    tris = subtriangulate(m.cell(0))
    areas = np.array([_shoelace(t) for t in tris])
    assert np.all(areas > 0)
    assert areas.sum() == pytest.approx(_shoelace(verts), rel=1e-13)


def test_not_star_shaped_needs_star_point():
    # a thin "C" whose centroid falls outside the cell
    verts = np.array([[0, 0], [3, 0], [3, 0.2], [0.2, 0.2], [0.2, 2.8], [3, 2.8], [3, 3], [0, 3.0]])
    m = PolyMesh(verts, [list(range(8))], np.zeros(1, dtype=int))
    with pytest.raises(MeshError, match="star"):
        subtriangulate(m.cell(0))


def test_regularity_reports(voronoi0):
    rep = validate_regularity(generate_cartesian(4))
    assert rep.max_diameter_ratio == pytest.approx(math.sqrt(2))
    assert rep.max_faces_per_cell == 4
    rep = validate_regularity(voronoi0)
    assert rep.max_faces_per_cell >= 3
    assert np.isfinite([rep.max_diameter_ratio, rep.min_measure_ratio]).all()


def test_bundled_voronoi_h():
    paths = bundled_voronoi_levels()
    assert len(paths) >= 3
    hs = [load_mesh(p).h for p in paths]
    # first level against the coarsest Voronoi mesh size of the reference table
    assert hs[0] == pytest.approx(6.50e-2, rel=0.05)
    assert all(a > b for a, b in zip(hs, hs[1:]))
