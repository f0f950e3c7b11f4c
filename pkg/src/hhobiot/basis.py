"""Scaled monomial bases, quadrature on polygons/segments, L2 projectors."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
from scipy.special import roots_jacobi

from .mesh import CellGeometry, subtriangulate

MAX_QUADRATURE_ORDER = 20


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, dim) physical coordinates
    weights: np.ndarray  # (nq,)
    order: int

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integrate samples whose first axis runs over the points."""
        return np.tensordot(self.weights, values, axes=(0, 0))


def _check_order(order: int):
    if order < 0 or order > MAX_QUADRATURE_ORDER:
        raise ValueError(
            f"quadrature order {order} outside [0, {MAX_QUADRATURE_ORDER}]"
        )


@lru_cache(maxsize=None)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [0, 1] exact up to ``order``."""
    _check_order(order)
    n = order // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def reference_triangle_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss-Jacobi rule on the unit triangle, exact up to ``order``.

    Returns barycentric-like coordinates ``(xi, eta)`` on the triangle
    ``{xi, eta >= 0, xi + eta <= 1}`` and weights summing to 1/2.
    """
    _check_order(order)
    n = order // 2 + 1
    a, wa = roots_jacobi(n, 1.0, 0.0)  # weight (1 - a)
    b, wb = np.polynomial.legendre.leggauss(n)
    a = 0.5 * (a + 1.0)  # in [0, 1], weight (1 - a) ~ collapsed Jacobian
    wa = wa / 4.0
    b = 0.5 * (b + 1.0)
    wb = wb / 2.0
    A, B = np.meshgrid(a, b, indexing="ij")
    xi = A.ravel()
    eta = ((1.0 - A) * B).ravel()
    w = np.outer(wa, wb).ravel()
    return np.column_stack([xi, eta]), w


def triangle_quadrature(tri: np.ndarray, order: int) -> QuadratureRule:
    ref, w = reference_triangle_rule(order)
    p0, p1, p2 = tri
    J = np.column_stack([p1 - p0, p2 - p0])
    det = abs(np.linalg.det(J))
    return QuadratureRule(p0 + ref @ J.T, w * det, order)


def cell_quadrature(cell: CellGeometry, order: int) -> QuadratureRule:
    """Composite rule over the fan sub-triangulation of ``cell``."""
    tris = subtriangulate(cell)
    ref, w = reference_triangle_rule(order)
    p0 = tris[:, 0]
    e1 = tris[:, 1] - p0
    e2 = tris[:, 2] - p0
    det = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    pts = (
        p0[:, None, :]
        + ref[None, :, 0:1] * e1[:, None, :]
        + ref[None, :, 1:2] * e2[:, None, :]
    )
    wts = det[:, None] * w[None, :]
    return QuadratureRule(pts.reshape(-1, 2), wts.ravel(), order)


def face_quadrature(a: np.ndarray, b: np.ndarray, order: int) -> QuadratureRule:
    """Gauss-Legendre rule on the segment ``[a, b]``."""
    s, w = gauss_legendre(order)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    length = float(np.hypot(*(b - a)))
    return QuadratureRule(a + s[:, None] * (b - a), w * length, order)


# -- bases --------------------------------------------------------------------


@lru_cache(maxsize=None)
def monomial_exponents(degree: int, dim: int = 2) -> np.ndarray:
    """Exponents of monomials of total degree <= ``degree``, graded order."""
    if dim == 1:
        return np.arange(degree + 1)[:, None]
    out = [(d - j, j) for d in range(degree + 1) for j in range(d + 1)]
    return np.array(out, dtype=int)


def dim_poly(degree: int, dim: int = 2) -> int:
    if degree < 0:
        return 0
    if dim == 1:
        return degree + 1
    return (degree + 1) * (degree + 2) // 2


class CellBasis:
    """Scaled monomials ``((x - x_T) / h_T)^alpha`` with ``|alpha| <= degree``.

    With ``orthonormalize=True`` the monomials are replaced by their
    Gram-Schmidt orthonormalization on the cell (via a Cholesky factor of
    the Gram matrix computed with ``quad``).
    """

    def __init__(self, center, h, degree, orthonormalize=False, quad=None):
        self.center = np.asarray(center, dtype=float)
        self.h = float(h)
        self.degree = int(degree)
        self.exps = monomial_exponents(self.degree)
        self.size = len(self.exps)
        self.transform = None
        if orthonormalize:
            if quad is None:
                raise ValueError("orthonormalization needs a quadrature rule")
            v = self._raw(quad.points)
            gram = (v * quad.weights[:, None]).T @ v
            L = np.linalg.cholesky(gram)
            self.transform = sla.solve_triangular(L, np.eye(self.size), lower=True).T

    def _raw(self, x):
        z = (np.asarray(x) - self.center) / self.h
        return z[..., 0:1] ** self.exps[:, 0] * z[..., 1:2] ** self.exps[:, 1]

    def _raw_grad(self, x):
        z = (np.asarray(x) - self.center) / self.h
        ex, ey = self.exps[:, 0], self.exps[:, 1]
        zx, zy = z[..., 0:1], z[..., 1:2]
        gx = ex * zx ** np.maximum(ex - 1, 0) * zy**ey
        gy = ey * zx**ex * zy ** np.maximum(ey - 1, 0)
        return np.stack([gx, gy], axis=-1) / self.h

    def values(self, x) -> np.ndarray:
        """Basis values at points ``x`` (..., 2) -> (..., size)."""
        v = self._raw(x)
        return v if self.transform is None else v @ self.transform

    def gradients(self, x) -> np.ndarray:
        """Basis gradients at ``x`` -> (..., size, 2)."""
        g = self._raw_grad(x)
        if self.transform is None:
            return g
        return np.einsum("...ik,ij->...jk", g, self.transform)


class FaceBasis:
    """Scaled monomials in the arc-length coordinate of a segment face.

    The coordinate is ``(x - x_F) . t_F / h_F`` with ``x_F`` the midpoint and
    ``t_F`` the unit tangent from the face's first to second vertex.  It only
    depends on the face, so both incident cells share the basis.
    """

    def __init__(self, a, b, degree, orthonormalize=False, quad=None):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        self.h = float(np.hypot(*(b - a)))
        self.center = 0.5 * (a + b)
        self.tangent = (b - a) / self.h
        self.degree = int(degree)
        self.size = degree + 1
        self.transform = None
        if orthonormalize:
            if quad is None:
                raise ValueError("orthonormalization needs a quadrature rule")
            v = self._raw(quad.points)
            gram = (v * quad.weights[:, None]).T @ v
            L = np.linalg.cholesky(gram)
            self.transform = sla.solve_triangular(L, np.eye(self.size), lower=True).T

    def coordinate(self, x):
        return (np.asarray(x) - self.center) @ self.tangent / self.h

    def _raw(self, x):
        s = self.coordinate(x)
        return s[..., None] ** np.arange(self.size)

    def values(self, x) -> np.ndarray:
        v = self._raw(x)
        return v if self.transform is None else v @ self.transform


def mass_matrix(values: np.ndarray, quad: QuadratureRule) -> np.ndarray:
    return (values * quad.weights[:, None]).T @ values


def l2_project(func, basis, quad: QuadratureRule) -> np.ndarray:
    """L2-orthogonal projection of ``func`` onto the span of ``basis``.

    ``func`` maps points (nq, 2) to values (nq,) or (nq, m); for vector
    valued functions the projection acts component-wise and the result has
    shape (size, m).  The Gram system is solved by Cholesky.
    """
    phi = basis.values(quad.points)
    gram = mass_matrix(phi, quad)
    vals = np.asarray(func(quad.points), dtype=float)
    rhs = (phi * quad.weights[:, None]).T @ vals
    try:
        factor = sla.cho_factor(gram)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "singular Gram matrix: degenerate geometry"
        ) from exc
    return sla.cho_solve(factor, rhs)


def approximation_order_check(func, meshes, degree: int, quad_order=None):
    """Observed L2 rates of ``v - pi^k v`` on a sequence of meshes.

    Returns ``(hs, errors, rates)``.
    """
    order = quad_order if quad_order is not None else 2 * degree + 6
    hs, errs = [], []
    for mesh in meshes:
        total = 0.0
        for g in mesh.geometry:
            q = cell_quadrature(g, order)
            basis = CellBasis(g.centroid, g.diameter, degree)
            coef = l2_project(func, basis, q)
            diff = basis.values(q.points) @ coef - func(q.points)
            total += q.integrate(diff**2)
        hs.append(mesh.h)
        errs.append(np.sqrt(total))
    hs, errs = np.array(hs), np.array(errs)
    rates = np.log(errs[:-1] / errs[1:]) / np.log(hs[:-1] / hs[1:])
    return hs, errs, rates
