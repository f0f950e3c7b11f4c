import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hhobiot.basis import (
    MAX_QUADRATURE_ORDER,
    CellBasis,
    FaceBasis,
    approximation_order_check,
    cell_quadrature,
    dim_poly,
    face_quadrature,
    l2_project,
    mass_matrix,
    monomial_exponents,
    reference_triangle_rule,
)
from hhobiot.mesh import generate_cartesian, subtriangulate

from conftest import hexagon_mesh


def test_square_integrals():
    sq = generate_cartesian(1).cell(0)
    q = cell_quadrature(sq, 2)
    assert q.integrate(q.points[:, 0] * q.points[:, 1]) == pytest.approx(0.25, abs=1e-15)
    q0 = cell_quadrature(sq, 0)
    assert q0.integrate(np.ones(len(q0.weights))) == pytest.approx(1.0, abs=1e-15)


def _refined_oracle(tri, func, levels=4, order=10):
    """Integrate by uniform red refinement of a triangle."""
    tris = [np.asarray(tri, dtype=float)]
    for _ in range(levels):
        new = []
        for a, b, c in tris:
            ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
            new += [np.array(t) for t in ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))]
        tris = new
    ref, w = reference_triangle_rule(order)
    total = 0.0
    for p0, p1, p2 in tris:
        J = np.column_stack([p1 - p0, p2 - p0])
        pts = p0 + ref @ J.T
        total += abs(np.linalg.det(J)) * w @ func(pts)
    return total


def test_hexagon_x2_against_refined_oracle():
    hexa = hexagon_mesh().cell(0)
    f = lambda x: x[..., 0] ** 2
    q = cell_quadrature(hexa, 2)
    oracle = sum(_refined_oracle(t, f) for t in subtriangulate(hexa))
    assert q.integrate(f(q.points)) == pytest.approx(oracle, rel=1e-12)


@pytest.mark.parametrize("order", range(0, MAX_QUADRATURE_ORDER + 1, 3))
def test_triangle_rule_exactness(order):
    # int over unit triangle of x^a y^b = a! b! / (a + b + 2)!
    from math import factorial

    ref, w = reference_triangle_rule(order)
    assert np.all(w > 0)
    for a, b in monomial_exponents(order):
        exact = factorial(a) * factorial(b) / factorial(a + b + 2)
        assert w @ (ref[:, 0] ** a * ref[:, 1] ** b) == pytest.approx(exact, rel=1e-13, abs=1e-16)


def test_order_cap():
    with pytest.raises(ValueError):
        cell_quadrature(generate_cartesian(1).cell(0), MAX_QUADRATURE_ORDER + 1)
    with pytest.raises(ValueError):
        face_quadrature(np.zeros(2), np.ones(2), -1)


def test_face_quadrature():
    q = face_quadrature(np.array([0.0, 0.0]), np.array([1.0, 0.0]), 2)
    assert q.integrate(q.points[:, 0] ** 2) == pytest.approx(1 / 3, rel=1e-15)
    a, b = np.array([0.2, 0.1]), np.array([0.7, 0.9])
    q = face_quadrature(a, b, 0)
    assert q.integrate(np.ones(len(q.weights))) == pytest.approx(np.linalg.norm(b - a))
    # degree-7 monomial along the segment: int_0^L s^7 ds = L^8 / 8
    q = face_quadrature(a, b, 7)
    L = np.linalg.norm(b - a)
    s = np.linalg.norm(q.points - a, axis=1)
    assert q.integrate(s**7) == pytest.approx(L**8 / 8, rel=1e-13)


def test_project_constant_and_segment():
    sq = generate_cartesian(1).cell(0)
    q = cell_quadrature(sq, 4)
    coef = l2_project(lambda x: x[..., 0], CellBasis(sq.centroid, sq.diameter, 0), q)
    assert coef[0] == pytest.approx(0.5)
    # x^2 onto P1 over [0, 1] is x - 1/6
    a, b = np.array([0.0, 0.0]), np.array([1.0, 0.0])
    fb = FaceBasis(a, b, 1)
    fq = face_quadrature(a, b, 6)
    c = l2_project(lambda x: x[..., 0] ** 2, fb, fq)
    xs = np.linspace(0, 1, 7)[:, None] * np.array([1.0, 0.0])
    assert np.allclose(fb.values(xs) @ c, xs[:, 0] - 1 / 6, atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(k=st.integers(1, 3), seed=st.integers(0, 10_000), ortho=st.booleans())
def test_projector_idempotent_and_orthogonal(k, seed, ortho):
    rng = np.random.default_rng(seed)
    cell = hexagon_mesh().cell(0)
    q = cell_quadrature(cell, 2 * k + 6)
    basis = CellBasis(cell.centroid, cell.diameter, k, ortho, q)
    coef = rng.normal(size=basis.size)
    back = l2_project(lambda x: basis.values(x) @ coef, basis, q)
    assert np.allclose(back, coef, atol=1e-13 * max(1, np.abs(coef).max()))
    shift = rng.normal()
    f = lambda x: np.sin(3 * x[..., 0] + shift) * np.exp(x[..., 1])
    c = l2_project(f, basis, q)
    phi = basis.values(q.points)
    resid = phi @ c - f(q.points)
    inner = q.integrate(resid[:, None] * phi)
    vnorm = np.sqrt(q.integrate(f(q.points) ** 2))
    wnorm = np.sqrt(np.diag(mass_matrix(phi, q)))
    assert np.all(np.abs(inner) <= 1e-12 * vnorm * wnorm)


def test_gram_spd_and_dimensions():
    cell = hexagon_mesh().cell(0)
    for k in (1, 2, 3):
        basis = CellBasis(cell.centroid, cell.diameter, k)
        assert basis.size == dim_poly(k) == (k + 1) * (k + 2) // 2
        q = cell_quadrature(cell, 2 * k)
        assert np.linalg.eigvalsh(mass_matrix(basis.values(q.points), q)).min() > 0


def test_gradients_match_finite_differences():
    cell = hexagon_mesh().cell(0)
    basis = CellBasis(cell.centroid, cell.diameter, 3)
    x = np.array([[0.45, 0.52], [0.6, 0.4]])
    g = basis.gradients(x)
    eps = 1e-6
    for j in range(2):
        e = np.zeros(2)
        e[j] = eps
        fd = (basis.values(x + e) - basis.values(x - e)) / (2 * eps)
        assert np.allclose(g[..., j], fd, atol=1e-8)


@pytest.mark.parametrize("k", [1, 2])
def test_approximation_rates(k):
    meshes = [generate_cartesian(n) for n in (4, 8, 16)]
    f = lambda x: np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])
    _, errs, rates = approximation_order_check(f, meshes, k)
    assert np.all(rates >= k + 1 - 0.15)
    poly = lambda x: x[..., 0] ** k - 2 * x[..., 1] ** k
    _, errs, _ = approximation_order_check(poly, meshes, k)
    assert np.all(errs < 1e-13)


def test_monomial_rate_exact_order():
    meshes = [generate_cartesian(n) for n in (8, 16, 32)]
    _, _, rates = approximation_order_check(lambda x: x[..., 0] ** 2, meshes, 1)
    assert rates[-1] == pytest.approx(2.0, abs=0.02)
