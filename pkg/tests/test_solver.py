import numpy as np
import pytest

from hhobiot.constitutive import IsotropicDamage, LinearElasticity, exp_hencky_mises
from hhobiot.mesh import generate_cartesian
from hhobiot.solver import (
    BiotDiscretization,
    NewtonError,
    ProblemData,
    SolverConfig,
    SolverError,
    TimeGrid,
    backward_difference,
    zero_mean_augment,
)
from hhobiot.verification import build_case_nl_biot_2d


def _disc(n=4, k=1, **kw):
    kw.setdefault("law", exp_hencky_mises())
    return BiotDiscretization(generate_cartesian(n), k, SolverConfig(**kw))


def _vec(fx, fy):
    return lambda x, t=0.0: np.stack([fx(x) + 0 * x[..., 0], fy(x) + 0 * x[..., 0]], -1)


# Stationary polynomial solution for Hooke's law (lambda = mu = 1):
#   u = (x^2, x y), p = x - y
#   sigma = [[7x, y], [y, 5x]], -div sigma + grad p = (-7, -1), -div grad p = 0
U = lambda x: np.stack([x[..., 0] ** 2, x[..., 0] * x[..., 1]], -1)
P = lambda x: x[..., 0] - x[..., 1]


def _poly_data(c0):
    return ProblemData(
        f=lambda x, t: _vec(lambda x: -7.0, lambda x: -1.0)(x),
        g=None,
        flux=lambda x, n, t: n[..., 0] - n[..., 1],
        dirichlet=lambda x, t: U(x),
        phi0=lambda x: c0 * P(x) + 3 * x[..., 0],
    )


def test_time_grid_and_backward_difference():
    g = TimeGrid(1.0, 4)
    assert g.tau == 0.25
    assert np.allclose(g.times(), [0, 0.25, 0.5, 0.75, 1.0])
    assert np.allclose(backward_difference([0.0, 1.0, 3.0], 0.5), [2.0, 4.0])
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(c0=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(newton_max=0)
    with pytest.raises(ValueError):
        _disc(gamma=0.0)
    with pytest.raises(ValueError, match="gamma"):
        _disc(law=IsotropicDamage())
    with pytest.raises(ValueError):
        BiotDiscretization(generate_cartesian(2), 1, SolverConfig())


def test_noncoercive_penalty_rejected():
    with pytest.raises(SolverError, match="varsigma"):
        _disc(varsigma=1e-3)


def test_zero_data_gives_zero_trajectory():
    disc = _disc()
    traj = disc.run_transient(ProblemData(), TimeGrid(1.0, 3))
    for s in traj.states:
        assert not s.u.any() and not s.p.any()
    assert traj.diagnostics["newton_iterations"] == [0, 0, 0]


def test_condensed_system_size():
    disc = _disc(n=2)
    sp_ = disc.space
    # 4 cells x 2 components x 3 P1 coefficients are eliminated
    assert sp_.n_cell_dofs == 24
    # 4 interior faces x 2 x 2 + 12 pressure dofs + multiplier
    assert disc._cond.n == 29


@pytest.mark.parametrize("c0", [0.0, 0.5])
@pytest.mark.parametrize("k", [1, 2])
def test_polynomial_solution_reproduced(c0, k):
    disc = _disc(n=3, k=k, c0=c0, law=LinearElasticity(1.0, 1.0))
    traj = disc.run_transient(_poly_data(c0), TimeGrid(1.0, 2))
    u_ex = disc.space.interpolate(U)
    p_ex = disc.space.project_pressure(P)
    for s in traj.states[1:]:
        assert np.abs(s.u - u_ex).max() < 1e-10
        assert np.abs(s.p - p_ex).max() < 1e-10
        assert abs(s.multiplier) < 1e-10
    # linear law: one Newton step from the zero state, none once exact
    assert traj.diagnostics["newton_iterations"] == [1, 0]


def test_condensed_matches_full():
    case = build_case_nl_biot_2d()
    out = []
    for condense in (True, False):
        disc = _disc(n=4, condense=condense)
        out.append(disc.run_transient(case.problem_data(), TimeGrid(1.0, 3)).states[-1])
    assert np.allclose(out[0].u, out[1].u, rtol=0, atol=1e-11 * np.abs(out[0].u).max())
    assert np.allclose(out[0].p, out[1].p, rtol=0, atol=1e-11 * np.abs(out[0].p).max())


def test_colamd_fallback_matches_amd():
    case = build_case_nl_biot_2d()
    a = _disc(n=4).run_transient(case.problem_data(), TimeGrid(1.0, 2)).states[-1]
    b = _disc(n=4, ordering="colamd").run_transient(case.problem_data(), TimeGrid(1.0, 2)).states[-1]
    assert np.allclose(a.p, b.p, atol=1e-11)


def test_pressure_mean_zero_when_incompressible():
    case = build_case_nl_biot_2d()
    disc = _disc(n=4)
    traj = disc.run_transient(case.problem_data(), TimeGrid(1.0, 4))
    for s in traj.states[1:]:
        assert abs(disc.mean @ s.p) < 1e-12
        assert s.newton_iterations <= 6
        h = s.residual_history
        # quadratic tail: each residual is at most a constant times the square of the previous
        for r0, r1 in zip(h[-3:-1], h[-2:]):
            if r0 > 1e-8 * h[0]:
                assert r1 <= 10 * r0**2 / h[0] + 1e-10 * h[0]


def test_initial_pressure_from_fluid_content():
    disc = _disc(n=3, c0=0.25)
    state = disc.initialize_state(ProblemData(phi0=lambda x: 0.25 + 0 * x[..., 0]))
    one = disc.space.project_pressure(lambda x: np.ones(x.shape[:-1]))
    assert np.allclose(state.p, one)
    assert not state.u.any()


def test_initialization_modes_agree():
    case = build_case_nl_biot_2d(c0=0.5)
    disc = _disc(n=4, c0=0.5)
    data = case.problem_data()
    f0 = lambda x: data.f(x, 0.0)
    a = disc.initialize_state(data, "explicit", f0=f0)
    b = disc.initialize_state(data, "reduced", f0=f0)
    assert np.allclose(a.u, b.u, atol=1e-10)
    assert np.allclose(a.p, b.p, atol=1e-10)
    with pytest.raises(ValueError):
        _disc(n=2).initialize_state(data, "reduced")


def test_incompatible_initial_content_rejected():
    disc = _disc(n=2)
    with pytest.raises(SolverError, match="mean"):
        disc.initialize_state(ProblemData(phi0=lambda x: 1 + 0 * x[..., 0]), "explicit")


def test_newton_failure_reports_history():
    case = build_case_nl_biot_2d()
    disc = _disc(n=4, newton_max=1)
    with pytest.raises(NewtonError) as exc:
        disc.run_transient(case.problem_data(), TimeGrid(1.0, 1))
    assert len(exc.value.history) == 2


def test_time_step_halving_diagnostics_converge():
    case = build_case_nl_biot_2d()
    disc = _disc(n=4)
    d = [disc.run_transient(case.problem_data(), TimeGrid(1.0, n)).diagnostics for n in (4, 8, 16)]
    for key in ("sum_tau_strain2", "sum_tau_pressure_dev2", "s_N_c_norm"):
        # first order in tau: successive changes at least shrink by 1.5
        assert abs(d[1][key] - d[2][key]) * 1.5 <= abs(d[0][key] - d[1][key])


def test_zero_mean_augment():
    import scipy.sparse as sps

    A = sps.eye(3, format="csr")
    Z = zero_mean_augment(A, np.array([1.0, 2.0]), 1).toarray()
    assert Z.shape == (4, 4)
    assert np.allclose(Z[3], [0, 1, 2, 0]) and np.allclose(Z[:, 3], [0, 1, 2, 0])


def test_metadata_records_settings():
    meta = _disc(n=2).metadata()
    assert meta["gamma"] == 2.0 and meta["k"] == 1 and meta["c0"] == 0.0
    assert "mesh_size_convention" in meta
