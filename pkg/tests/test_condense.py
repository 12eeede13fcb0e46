import numpy as np
import pytest

from gpmpcbench.control import condense
from gpmpcbench.control.config import MpcConfig
from gpmpcbench.gp.linearization import ExtendedLocalModel
from gpmpcbench.solvers.active_set import solve_qp

N, M = 2, 1
EXT = N + N * N

def make_config(horizon, **overrides):
    options = dict(
        horizon=horizon, q_mat=np.diag([1.0, 2.0]), r_mat=np.array([[0.5]]),
        u_min=np.array([-10.0]), u_max=np.array([10.0]), x_min=None, x_max=None,
    )
    options.update(overrides)
    return MpcConfig(**options)

def random_problem(rng, horizon, cfg=None):
    cfg = cfg or make_config(horizon)
    local = ExtendedLocalModel(
        a_mat=0.3 * rng.standard_normal((EXT, EXT)),
        b_mat=rng.standard_normal((EXT, M)),
        op_state=np.zeros(EXT),
        op_control=np.zeros(M),
    )
    s_k = 0.5 * rng.standard_normal(EXT)
    ds_k = 0.1 * rng.standard_normal(EXT)
    u_prev = rng.standard_normal(M)
    ref = rng.standard_normal((horizon, N))
    return local, condense.build_condensed_qp(local, s_k, ds_k, u_prev, ref, cfg), cfg

def test_single_step_hessian(rng):
    local, cqp, cfg = random_problem(rng, 1)
    q_ext = np.zeros((EXT, EXT))
    q_ext[:N, :N] = cfg.q_mat
    q_ext[N:, N:] = np.kron(cfg.q_mat, np.eye(N))
    expected = 2.0 * (local.b_mat.T @ q_ext @ local.b_mat + cfg.r_mat)
    np.testing.assert_allclose(cqp.phi, expected, atol=1e-12)
    np.testing.assert_array_equal(cqp.phi, cqp.phi.T)

@pytest.mark.parametrize("horizon", [1, 2, 4])
def test_objective_matches_direct_cost(rng, horizon):
    _, cqp, cfg = random_problem(rng, horizon)
    for _ in range(5):
        delta_u = rng.standard_normal(horizon * M)
        direct = condense.direct_cost(cqp, delta_u, cfg)
        assert cqp.objective(delta_u) == pytest.approx(direct, rel=1e-9, abs=1e-9)

def test_predict_follows_velocity_recursion(rng):
    local, cqp, _ = random_problem(rng, 3)
    delta_u = rng.standard_normal(3 * M)
    stacked, controls = cqp.predict(delta_u)

    state, step, control = cqp.s_k.copy(), cqp.ds_k.copy(), cqp.u_prev.copy()
    for index in range(3):
        increment = delta_u[index * M:(index + 1) * M]
        step = local.a_mat @ step + local.b_mat @ increment
        state = state + step
        control = control + increment
        np.testing.assert_allclose(stacked[index], state, atol=1e-10)
        np.testing.assert_allclose(controls[index], control, atol=1e-12)

def test_predicted_covariances_are_psd(rng):
    _, cqp, _ = random_problem(rng, 3)
    _, covs, _ = cqp.predicted_moments(rng.standard_normal(3))
    for cov in covs:
        assert np.all(np.linalg.eigvalsh(cov) >= -1e-12)

def test_rows_without_state_bounds(rng):
    _, cqp, _ = random_problem(rng, 3)
    assert cqp.g_mat.shape == (2 * 3 * M, 3 * M)
    assert cqp.qp_problem().is_feasible(np.zeros(3))

def test_rows_with_state_bounds(rng):
    both = make_config(3, x_min=[-1e3, -1e3], x_max=[1e3, 1e3])
    _, cqp, _ = random_problem(rng, 3, both)
    assert cqp.g_mat.shape[0] == 2 * 3 * M + 2 * 3 * N

    upper_only = make_config(3, x_max=[1e3, 1e3])
    _, cqp, _ = random_problem(np.random.default_rng(5), 3, upper_only)
    assert cqp.g_mat.shape[0] == 2 * 3 * M + 3 * N

def test_control_rows_bound_the_plan(rng):
    cfg = make_config(2, u_min=[-1.0], u_max=[1.0])
    local = ExtendedLocalModel(np.eye(EXT), np.zeros((EXT, M)), np.zeros(EXT), np.zeros(M))
    cqp = condense.build_condensed_qp(local, np.zeros(EXT), np.zeros(EXT), np.array([0.5]), np.zeros((2, N)), cfg)
    prob = cqp.qp_problem()
    assert prob.is_feasible(np.array([0.5, -1.0]))
    assert not prob.is_feasible(np.array([0.6, 0.0]))
    assert not prob.is_feasible(np.array([0.0, -1.6]))

def test_diagonal_variance_weight():
    cfg = make_config(1, variance_weight="diagonal")
    np.testing.assert_array_equal(condense._variance_weight(cfg), np.diag([1.0, 0.0, 0.0, 2.0]))
    trace = make_config(1)
    np.testing.assert_array_equal(condense._variance_weight(trace), np.diag([1.0, 1.0, 2.0, 2.0]))

def test_shape_checks(rng):
    local, _, cfg = random_problem(rng, 2)
    with pytest.raises(ValueError):
        condense.build_condensed_qp(local, np.zeros(EXT), np.zeros(EXT), np.zeros(M), np.zeros((3, N)), cfg)
    with pytest.raises(ValueError):
        condense.build_condensed_qp(local, np.zeros(EXT + 1), np.zeros(EXT), np.zeros(M), np.zeros((2, N)), cfg)

def test_single_step_linear_term_and_constant(rng):
    local, cqp, cfg = random_problem(rng, 1)
    q_ext = np.zeros((EXT, EXT))
    q_ext[:N, :N] = cfg.q_mat
    q_ext[N:, N:] = np.kron(cfg.q_mat, np.eye(N))
    offset = cqp.s_k + local.a_mat @ cqp.ds_k - np.concatenate((cqp.ref[0], np.zeros(N * N)))
    expected_psi = 2.0 * (local.b_mat.T @ q_ext @ offset + cfg.r_mat @ cqp.u_prev)
    expected_c = offset @ q_ext @ offset + cqp.u_prev @ cfg.r_mat @ cqp.u_prev
    np.testing.assert_allclose(cqp.psi, expected_psi, atol=1e-12)
    assert cqp.const_c == pytest.approx(expected_c, rel=1e-12)

def test_solution_means_respect_nominal_tightening():
    cfg = make_config(3, x_max=[1.0, 1.0])
    local = ExtendedLocalModel(
        a_mat=0.5 * np.eye(EXT),
        b_mat=np.array([[1.0], [0.5], [0.0], [0.0], [0.0], [0.0]]),
        op_state=np.zeros(EXT),
        op_control=np.zeros(M),
    )
    s_k = np.array([0.0, 0.0, 0.1, 0.0, 0.0, 0.1])
    cqp = condense.build_condensed_qp(local, s_k, np.zeros(EXT), np.zeros(M), np.full((3, N), 5.0), cfg)
    solution = solve_qp(cqp.qp_problem(), np.zeros(3))

    means, _, _ = cqp.predicted_moments(solution.x)
    _, nominal_covs, _ = cqp.predicted_moments(np.zeros(3))
    upper = 1.0 - 2.0 * np.diagonal(nominal_covs, axis1=1, axis2=2)
    assert np.all(means <= upper + 1e-9)
    assert np.min(np.abs(means - upper)) <= 1e-8
