"""Polygonal meshes: ingestion, Cartesian generation, topology and geometry.

Cells are vertex loops listed counter-clockwise.  Faces (edges in 2D) are
derived from the cells, each one carrying one or two incident cells.  The
first incident cell of an interior face defines the face's reference normal.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

MESH_SIZE_CONVENTION = "h = max cell diameter (max vertex-to-vertex distance)"


class MeshError(ValueError):
    """Raised for malformed, non-manifold or degenerate meshes."""


@dataclass(frozen=True)
class CellGeometry:
    """Geometric data of one polygonal cell."""

    index: int
    vertices: np.ndarray  # (nv, 2), counter-clockwise
    diameter: float
    measure: float
    centroid: np.ndarray
    star_point: np.ndarray
    faces: np.ndarray  # global face ids, in loop order
    face_diameters: np.ndarray
    face_normals: np.ndarray  # (nf, 2) unit, outward from this cell
    region: int

    @property
    def n_faces(self) -> int:
        return len(self.faces)


@dataclass
class PolyMesh:
    """Immutable-by-convention polygonal mesh of a 2D domain.

    ``faces[f]`` holds the two vertex ids of face ``f`` and ``face_cells[f]``
    its incident cells, ``-1`` in the second slot on the boundary.
    """

    vertices: np.ndarray
    cells: list[np.ndarray]
    regions: np.ndarray
    star_points: np.ndarray | None = None
    faces: np.ndarray = field(init=False)
    face_cells: np.ndarray = field(init=False)
    cell_faces: list[np.ndarray] = field(init=False)
    dim: int = 2

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.cells = [np.asarray(c, dtype=int) for c in self.cells]
        self.regions = np.asarray(self.regions, dtype=int)
        if len(self.regions) != len(self.cells):
            raise MeshError("one region id per cell required")
        self._build_topology()
        self._geometry = [self._cell_geometry(i) for i in range(self.n_cells)]

    # -- topology --------------------------------------------------------

    def _build_topology(self):
        nv = len(self.vertices)
        face_ids: dict[tuple[int, int], int] = {}
        faces: list[tuple[int, int]] = []
        incident: list[list[int]] = []
        directions: list[list[int]] = []
        cell_faces = []
        for c, loop in enumerate(self.cells):
            if len(loop) < 3:
                raise MeshError(f"cell {c} has fewer than 3 vertices")
            if loop.min() < 0 or loop.max() >= nv:
                raise MeshError(f"cell {c} references an unknown vertex")
            if len(set(loop.tolist())) != len(loop):
                raise MeshError(f"cell {c} repeats a vertex")
            area = _signed_area(self.vertices[loop])
            if abs(area) <= 1e-14:
                raise MeshError(f"degenerate cell {c}: zero area")
            if area < 0:
                raise MeshError(
                    f"inconsistent orientation: cell {c} is clockwise, "
                    "cells must be listed counter-clockwise"
                )
            ids = []
            for a, b in zip(loop, np.roll(loop, -1)):
                key = (min(a, b), max(a, b))
                f = face_ids.get(key)
                if f is None:
                    f = len(faces)
                    face_ids[key] = f
                    faces.append((int(a), int(b)))
                    incident.append([])
                    directions.append([])
                incident[f].append(c)
                directions[f].append(1 if (a, b) == faces[f] else -1)
                ids.append(f)
            cell_faces.append(np.array(ids, dtype=int))

        face_cells = np.full((len(faces), 2), -1, dtype=int)
        for f, cs in enumerate(incident):
            if len(cs) > 2:
                raise MeshError(
                    f"non-manifold face {faces[f]}: shared by {len(cs)} cells"
                )
            if len(cs) == 2:
                if cs[0] == cs[1]:
                    raise MeshError(f"cell {cs[0]} uses face {faces[f]} twice")
                if directions[f][0] == directions[f][1]:
                    raise MeshError(
                        f"inconsistent orientation across face {faces[f]}"
                    )
            face_cells[f, : len(cs)] = cs
        self.faces = np.array(faces, dtype=int).reshape(-1, 2)
        self.face_cells = face_cells
        self.cell_faces = cell_faces

    def _cell_geometry(self, c: int) -> CellGeometry:
        loop = self.cells[c]
        xy = self.vertices[loop]
        area, centroid = _polygon_area_centroid(xy)
        diffs = xy[:, None, :] - xy[None, :, :]
        diameter = float(np.sqrt((diffs**2).sum(-1)).max())
        edges = np.roll(xy, -1, axis=0) - xy
        lengths = np.hypot(edges[:, 0], edges[:, 1])
        # counter-clockwise loop: outward normal is the tangent rotated by -90 deg
        normals = np.column_stack([edges[:, 1], -edges[:, 0]]) / lengths[:, None]
        if self.star_points is not None:
            star = np.asarray(self.star_points[c], dtype=float)
        else:
            star = centroid
        return CellGeometry(
            index=c,
            vertices=xy,
            diameter=diameter,
            measure=area,
            centroid=centroid,
            star_point=star,
            faces=self.cell_faces[c],
            face_diameters=lengths,
            face_normals=normals,
            region=int(self.regions[c]),
        )

    # -- accessors -------------------------------------------------------

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def cell(self, c: int) -> CellGeometry:
        return self._geometry[c]

    @property
    def geometry(self) -> list[CellGeometry]:
        return self._geometry

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_cells[:, 1] < 0)

    @property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_cells[:, 1] >= 0)

    @property
    def is_boundary_face(self) -> np.ndarray:
        return self.face_cells[:, 1] < 0

    @property
    def h(self) -> float:
        return max(g.diameter for g in self._geometry)

    def face_length(self, f: int) -> float:
        a, b = self.vertices[self.faces[f]]
        return float(np.hypot(*(b - a)))

    def face_lengths(self) -> np.ndarray:
        d = self.vertices[self.faces[:, 1]] - self.vertices[self.faces[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def face_normal(self, f: int) -> np.ndarray:
        """Unit normal of face ``f`` pointing out of its first incident cell."""
        c = self.face_cells[f, 0]
        g = self._geometry[c]
        return g.face_normals[np.flatnonzero(g.faces == f)[0]]

    def cell_measures(self) -> np.ndarray:
        return np.array([g.measure for g in self._geometry])

    def total_measure(self) -> float:
        return float(self.cell_measures().sum())


def _signed_area(xy: np.ndarray) -> float:
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _polygon_area_centroid(xy: np.ndarray) -> tuple[float, np.ndarray]:
    x, y = xy[:, 0], xy[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    cx = ((x + xn) * cross).sum() / (6 * area)
    cy = ((y + yn) * cross).sum() / (6 * area)
    return float(area), np.array([cx, cy])


# -- construction -----------------------------------------------------------


def generate_cartesian(n: int, region_id: int = 0) -> PolyMesh:
    """Uniform ``n x n`` partition of the unit square into square cells."""
    if n < 1:
        raise ValueError("n must be at least 1")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    cells = []
    for j in range(n):
        for i in range(n):
            v0 = j * (n + 1) + i
            cells.append([v0, v0 + 1, v0 + n + 2, v0 + n + 1])
    return PolyMesh(vertices, cells, np.full(n * n, region_id))


def load_mesh(path: str | Path, format: str = "polymesh") -> PolyMesh:
    """Read a mesh file.

    Only the ``polymesh`` text format is supported::

        polymesh 2d
        vertices N
        x y                      (N lines)
        cells M
        nv i0 i1 ... region_id   (M lines)
        starpoints               (optional)
        x y                      (M lines)

    ``#`` starts a comment.  Errors carry the offending line number.
    """
    if format != "polymesh":
        raise ValueError(f"unsupported mesh format {format!r}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mesh file not found: {path}")
    lines = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        text = raw.split("#", 1)[0].split()
        if text:
            lines.append((lineno, text))
    pos = 0

    def take() -> tuple[int, list[str]]:
        nonlocal pos
        if pos >= len(lines):
            last = lines[-1][0] if lines else 0
            raise MeshError(f"{path}:{last}: unexpected end of file")
        item = lines[pos]
        pos += 1
        return item

    def parse_error(lineno, msg):
        return MeshError(f"{path}:{lineno}: {msg}")

    lineno, tok = take()
    if tok != ["polymesh", "2d"]:
        raise parse_error(lineno, "expected header 'polymesh 2d'")
    lineno, tok = take()
    if len(tok) != 2 or tok[0] != "vertices":
        raise parse_error(lineno, "expected 'vertices N'")
    try:
        nv = int(tok[1])
        vertices = np.empty((nv, 2))
        for i in range(nv):
            lineno, tok = take()
            if len(tok) != 2:
                raise parse_error(lineno, "expected two coordinates")
            vertices[i] = [float(tok[0]), float(tok[1])]
        lineno, tok = take()
        if len(tok) != 2 or tok[0] != "cells":
            raise parse_error(lineno, "expected 'cells M'")
        nc = int(tok[1])
        cells, regions = [], []
        for _ in range(nc):
            lineno, tok = take()
            count = int(tok[0])
            if len(tok) != count + 2:
                raise parse_error(
                    lineno, f"expected {count} vertex ids and a region id"
                )
            cells.append([int(t) for t in tok[1 : count + 1]])
            regions.append(int(tok[-1]))
        star = None
        if pos < len(lines):
            lineno, tok = take()
            if tok != ["starpoints"]:
                raise parse_error(lineno, "expected 'starpoints' or end of file")
            star = np.empty((nc, 2))
            for i in range(nc):
                lineno, tok = take()
                if len(tok) != 2:
                    raise parse_error(lineno, "expected two coordinates")
                star[i] = [float(tok[0]), float(tok[1])]
        if pos < len(lines):
            raise parse_error(lines[pos][0], "trailing content")
    except ValueError as exc:
        if isinstance(exc, MeshError):
            raise
        raise parse_error(lineno, str(exc)) from None
    return PolyMesh(vertices, cells, regions, star_points=star)


def save_mesh(mesh: PolyMesh, path: str | Path) -> None:
    """Write ``mesh`` in the ``polymesh`` text format."""
    out = ["polymesh 2d", f"vertices {len(mesh.vertices)}"]
    out += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    out.append(f"cells {mesh.n_cells}")
    for loop, r in zip(mesh.cells, mesh.regions):
        out.append(" ".join([str(len(loop)), *map(str, loop), str(r)]))
    if mesh.star_points is not None:
        out.append("starpoints")
        out += [f"{x:.17g} {y:.17g}" for x, y in mesh.star_points]
    Path(path).write_text("\n".join(out) + "\n")


def subtriangulate(cell: CellGeometry) -> np.ndarray:
    """Fan triangulation of ``cell`` from its star point, shape ``(nf, 3, 2)``.

    Each triangle joins the star point to one face, so triangle ``i`` sits on
    face ``i`` of the cell loop.
    """
    xy = cell.vertices
    p = cell.star_point
    tris = np.stack(
        [np.broadcast_to(p, xy.shape), xy, np.roll(xy, -1, axis=0)], axis=1
    )
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    areas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    if np.any(areas <= 1e-14 * cell.diameter**2):
        raise MeshError(
            f"cell {cell.index} is not star-shaped with respect to "
            f"{tuple(p)}; supply a star point in the mesh file"
        )
    return tris


@dataclass
class RegularityReport:
    max_diameter_ratio: float  # max over cells/faces of h_T / h_F
    max_faces_per_cell: int
    min_measure_ratio: float  # min over cells of |T| / h_T^d
    h: float
    n_cells: int
    warnings: list[str]


def validate_regularity(mesh: PolyMesh, ratio_warn: float = 50.0) -> RegularityReport:
    """Report mesh regularity indicators.  Never raises; only logs warnings."""
    ratios, counts, shapes = [], [], []
    for g in mesh.geometry:
        ratios.append(g.diameter / g.face_diameters.min())
        counts.append(g.n_faces)
        shapes.append(g.measure / g.diameter**mesh.dim)
    report = RegularityReport(
        max_diameter_ratio=float(max(ratios)),
        max_faces_per_cell=int(max(counts)),
        min_measure_ratio=float(min(shapes)),
        h=mesh.h,
        n_cells=mesh.n_cells,
        warnings=[],
    )
    if report.max_diameter_ratio > ratio_warn:
        report.warnings.append(
            f"h_T/h_F reaches {report.max_diameter_ratio:.3g}: very small faces"
        )
    if report.min_measure_ratio < 1e-3:
        report.warnings.append(
            f"|T|/h_T^d drops to {report.min_measure_ratio:.3g}: flat cells"
        )
    for w in report.warnings:
        logger.warning(w)
    return report


def bundled_voronoi_levels() -> list[Path]:
    """Paths of the bundled Voronoi mesh family, coarsest first."""
    data = Path(__file__).parent / "data"
    return sorted(data.glob("voronoi_*.mesh"))


def cartesian_h(n: int) -> float:
    return math.sqrt(2.0) / n
