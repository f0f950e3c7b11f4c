import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hhobiot.constitutive import (
    HenckyMises,
    IsotropicDamage,
    LinearElasticity,
    RegionalLaw,
    check_assumptions,
    dev_invariant,
    eval_stress,
    eval_tangent,
    make_law,
    exp_hencky_mises,
    recommended_gamma,
)

LAWS = {
    "linear": lambda: LinearElasticity(0.7, 1.3),
    "hencky": exp_hencky_mises,
    "damage": lambda: IsotropicDamage(1.0, 1.0),
}

sym2 = arrays(np.float64, (2, 2), elements=st.floats(-3, 3)).map(lambda a: 0.5 * (a + a.T))


def test_dev_values():
    assert dev_invariant(np.eye(2)) == 0.0
    assert dev_invariant(np.array([[1.0, 0.0], [0.0, -1.0]])) == pytest.approx(2.0)
    assert dev_invariant(np.array([[0.0, 1.0], [1.0, 0.0]])) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        dev_invariant(np.array([[0.0, 1.0], [0.0, 0.0]]))


@given(sym2)
def test_dev_nonnegative(tau):
    assert dev_invariant(tau) >= -1e-12


def test_hencky_stress_values():
    law = exp_hencky_mises()
    # rho = 0: lam = 2, 2 mu = 2, sigma(I) = 2*2 I + 2 I
    assert np.allclose(law.stress(np.eye(2)), 6 * np.eye(2))
    assert np.allclose(law.stress(np.zeros((2, 2))), 0)
    t = np.array([[1.0, 0.0], [0.0, -1.0]])
    assert np.allclose(law.stress(t), (4 - 2 * np.exp(-2.0)) * t)


def test_linear_stress_values():
    law = LinearElasticity(1.0, 1.0)
    assert np.allclose(law.stress(np.eye(2)), 4 * np.eye(2))
    assert recommended_gamma(law) == 2.0
    assert recommended_gamma(law, 0.5) == 0.5


@pytest.mark.parametrize("name", list(LAWS))
def test_tangent_matches_finite_differences(name):
    law = LAWS[name]()
    rng = np.random.default_rng(0)
    for _ in range(20):
        tau = rng.normal(size=(2, 2))
        tau = tau + tau.T
        eta = rng.normal(size=(2, 2))
        eta = eta + eta.T
        h = 1e-6
        fd = (law.stress(tau + h * eta) - law.stress(tau - h * eta)) / (2 * h)
        assert np.allclose(eval_tangent(law, None, tau, eta), fd, atol=1e-7 * max(1, np.abs(fd).max()))


@pytest.mark.parametrize("name", ["linear", "hencky"])
@settings(max_examples=50, deadline=None)
@given(tau=sym2, a=sym2, b=sym2)
def test_tangent_symmetric(name, tau, a, b):
    law = LAWS[name]()
    C = law.tangent(tau)
    lhs = np.einsum("ij,ijkl,kl->", a, C, b)
    rhs = np.einsum("ij,ijkl,kl->", b, C, a)
    assert lhs == pytest.approx(rhs, abs=1e-10 * max(1.0, abs(lhs)))


def test_damage_tangent_symmetry_only_without_lambda():
    tau = np.array([[1.0, 0.3], [0.3, -0.2]])
    a = np.array([[1.0, 0.0], [0.0, 0.0]])
    b = np.array([[0.0, 1.0], [1.0, 0.0]])
    C = IsotropicDamage(0.0, 1.0).tangent(tau)
    assert np.einsum("ij,ijkl,kl->", a, C, b) == pytest.approx(np.einsum("ij,ijkl,kl->", b, C, a))
    C = IsotropicDamage(2.0, 1.0).tangent(tau)
    assert abs(np.einsum("ij,ijkl,kl->", a, C, b) - np.einsum("ij,ijkl,kl->", b, C, a)) > 1e-3


@settings(max_examples=100, deadline=None)
@given(tau=sym2)
def test_hencky_bounds(tau):
    law = exp_hencky_mises()
    s = law.stress(tau)
    n2 = (tau * tau).sum()
    assert (s * tau).sum() >= 2 * n2 * (1 - 1e-12)
    assert np.sqrt((s * s).sum()) <= 6 * np.sqrt(n2) * (1 + 1e-12) + 1e-300


@pytest.mark.parametrize("name", list(LAWS))
def test_check_assumptions(name):
    res = check_assumptions(LAWS[name](), n_samples=400)
    assert all(res.values()), res


def test_damage_needs_explicit_gamma():
    with pytest.raises(ValueError, match="gamma"):
        recommended_gamma(IsotropicDamage())
    assert recommended_gamma(IsotropicDamage(), 1.5) == 1.5


def test_hencky_gamma_in_range():
    law = exp_hencky_mises()
    g = recommended_gamma(law)
    assert law.c_cv2 <= g <= law.c_gr
    assert g == 2.0


def test_regional_and_factory():
    law = RegionalLaw({0: LinearElasticity(1, 1), 1: LinearElasticity(1, 3)})
    assert law.for_region(1).mu == 3
    assert recommended_gamma(law) == 2.0
    assert isinstance(make_law("hencky_mises"), HenckyMises)
    with pytest.raises(ValueError):
        make_law("plasticity")
    with pytest.raises(ValueError):
        LinearElasticity(1.0, 0.0)


def test_eval_stress_rejects_nonfinite():
    law = HenckyMises(
        lam_fn=lambda r: np.exp(r), mu_fn=lambda r: 1 + 0 * r,
        dlam_fn=lambda r: np.exp(r), dmu_fn=lambda r: 0 * r,
        mu_bounds=(1, 1), lam_bounds=(0, np.inf),
    )
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(FloatingPointError):
        eval_stress(law, None, np.diag([1e3, -1e3]))


def test_batched_shapes():
    law = exp_hencky_mises()
    tau = np.random.default_rng(0).normal(size=(3, 4, 2, 2))
    tau = tau + np.swapaxes(tau, -1, -2)
    assert law.stress(tau).shape == (3, 4, 2, 2)
    assert law.tangent(tau).shape == (3, 4, 2, 2, 2, 2)
