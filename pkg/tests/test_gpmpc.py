import logging

import numpy as np
import pytest

from gpmpcbench.control import gpmpc1, gpmpc2
from gpmpcbench.control.config import ControlDecision, MpcConfig, ReferenceTrajectory
from gpmpcbench.control.cost import tightening_margin
from gpmpcbench.control.loop import StepRecord, TrajectoryLog, lyapunov_diagnostic, run_receding_horizon
from gpmpcbench.errors import ControllerError, SqpError
from gpmpcbench.gp.linearization import finite_diff_jacobian
from gpmpcbench.gp.propagation import GaussianState

TOY_STATE = GaussianState(np.array([0.2, -0.3]), np.array([[0.05, 0.01], [0.01, 0.03]]))

def two_state_config(horizon=2, **overrides):
    options = dict(
        horizon=horizon, q_mat=np.diag([1.0, 0.5]), r_mat=np.array([[0.1]]),
        u_min=np.array([-1.0]), u_max=np.array([1.0]), x_min=None, x_max=None,
    )
    options.update(overrides)
    return MpcConfig(**options)

def one_state_config(horizon=2, **overrides):
    options = dict(
        horizon=horizon, q_mat=np.eye(1), r_mat=np.array([[0.1]]),
        u_min=np.array([-1.0]), u_max=np.array([1.0]), x_min=None, x_max=None,
    )
    options.update(overrides)
    return MpcConfig(**options)

class ShiftPlant:
    """x' = x + 0.5·u, the state is measured"""
    output_indices = (0,)

    def __init__(self):
        self.state = np.zeros(1)

    def reset(self):
        self.state = np.zeros(1)
        return self.state.copy()

    def step(self, control, rng):
        self.state = self.state + 0.5 * np.asarray(control)
        return self.state.copy(), self.state.copy()

class FailingController:
    """Holds zero, then fails on the given step"""
    def __init__(self, model, cfg, fail_at):
        self.model = model
        self.cfg = cfg
        self.fail_at = fail_at
        self.calls = 0

    def reset(self):
        self.calls = 0

    def step(self, state, u_prev, ref):
        if self.calls == self.fail_at:
            raise SqpError("no progress")
        self.calls += 1
        horizon = self.cfg.horizon
        return ControlDecision(
            control=np.zeros(1), planned_controls=np.zeros((horizon, 1)),
            predicted_means=np.tile(state.mean, (horizon, 1)), predicted_vars=np.zeros((horizon, 1)),
            objective=0.0, terminal_cost=0.0, iterations=0, solve_ms=0.0,
        )

def test_horizon_gradient_matches_differences(toy_model, rng):
    cfg = two_state_config()
    problem = gpmpc1.HorizonProblem(toy_model, TOY_STATE, rng.standard_normal((2, 2)), cfg)
    z = np.array([0.3, -0.2])
    numeric = finite_diff_jacobian(lambda values: np.array([problem.objective(values)]), z)[0]
    np.testing.assert_allclose(problem.gradient(z), numeric, rtol=1e-5, atol=1e-7)

def test_state_constraint_jacobian_matches_differences(toy_model, rng):
    cfg = two_state_config(x_min=[-5.0, -5.0], x_max=[5.0, 5.0])
    problem = gpmpc1.HorizonProblem(toy_model, TOY_STATE, rng.standard_normal((2, 2)), cfg)
    assert problem.has_state_constraints()
    z = np.array([0.3, -0.2])
    values, jacobian = problem.state_constraints(z)
    assert values.shape == (2 * 2 * 2,)
    assert np.all(values < 0)
    numeric = finite_diff_jacobian(lambda point: problem.state_constraints(point)[0], z)
    np.testing.assert_allclose(jacobian, numeric, rtol=1e-5, atol=1e-7)

def test_values_skip_sensitivities(toy_model, rng, monkeypatch):
    cfg = two_state_config(x_min=[-5.0, -5.0], x_max=[5.0, 5.0])
    problem = gpmpc1.HorizonProblem(toy_model, TOY_STATE, rng.standard_normal((2, 2)), cfg)
    z = np.array([0.3, -0.2])
    expected = problem.objective(z), problem.state_constraints(z)[0]
    fresh = gpmpc1.HorizonProblem(toy_model, TOY_STATE, problem.ref, cfg)

    def no_jacobians(*args):
        raise AssertionError("sensitivities evaluated")

    monkeypatch.setattr(gpmpc1, "propagate_state_jacobians", no_jacobians)
    assert fresh.objective(z) == pytest.approx(expected[0], rel=1e-12)
    np.testing.assert_allclose(fresh.state_constraint_values(z), expected[1], rtol=1e-12, atol=1e-14)

def test_gauss_newton_hessian_is_positive_definite(toy_model, rng):
    cfg = two_state_config()
    problem = gpmpc1.HorizonProblem(toy_model, TOY_STATE, rng.standard_normal((2, 2)), cfg)
    hessian = problem.gauss_newton_hessian(np.array([0.3, -0.2]))
    np.testing.assert_array_equal(hessian, hessian.T)
    assert np.linalg.eigvalsh(hessian)[0] >= 2 * 0.1 - 1e-12

def test_horizon_problem_checks_reference(toy_model):
    with pytest.raises(ValueError):
        gpmpc1.HorizonProblem(toy_model, TOY_STATE, np.zeros((3, 2)), two_state_config())

def test_gpmpc1_pinned_control(toy_model):
    cfg = two_state_config(u_min=[0.0], u_max=[0.0])
    u_k, decision = gpmpc1.gpmpc1_step(toy_model, TOY_STATE, np.zeros(1), np.ones((2, 2)), cfg)
    assert u_k[0] == 0.0
    np.testing.assert_array_equal(decision.planned_controls, np.zeros((2, 1)))

def test_gpmpc1_holds_still_system(still_model):
    state = GaussianState(np.zeros(2), 0.01 * np.eye(2))
    u_k, decision = gpmpc1.gpmpc1_step(still_model, state, np.zeros(1), np.zeros((2, 2)), two_state_config())
    assert np.linalg.norm(u_k) <= 1e-3
    assert decision.predicted_means.shape == (2, 2)
    assert decision.terminal_cost <= decision.objective

def test_gpmpc2_zero_linear_term(still_model):
    state = GaussianState(np.zeros(2), np.zeros((2, 2)))
    u_k, decision, _ = gpmpc2.gpmpc2_step(still_model, state, np.zeros(1), np.zeros((2, 2)), two_state_config())
    assert np.linalg.norm(u_k) <= 1e-6
    assert decision.objective == pytest.approx(0.0, abs=1e-6)

def test_gpmpc2_saturates(control_model):
    cfg = one_state_config(r_mat=[[1e-3]], u_min=[-0.2], u_max=[0.2])
    state = GaussianState(np.zeros(1), np.array([[1e-6]]))
    u_k, decision, working_set = gpmpc2.gpmpc2_step(control_model, state, np.zeros(1), np.full((2, 1), 10.0), cfg)
    assert u_k[0] == pytest.approx(0.2, abs=1e-9)
    assert np.all(decision.planned_controls <= 0.2 + 1e-9)
    assert working_set.active

def test_gpmpc2_warm_start(control_model):
    cfg = one_state_config(r_mat=[[1e-3]], u_min=[-0.2], u_max=[0.2])
    state = GaussianState(np.zeros(1), np.array([[1e-6]]))
    controller = gpmpc2.Gpmpc2Controller(control_model, cfg)
    first = controller.step(state, np.zeros(1), np.full((2, 1), 10.0))
    second = controller.step(state, np.zeros(1), np.full((2, 1), 10.0))
    assert second.iterations <= 1
    np.testing.assert_allclose(second.control, first.control, atol=1e-9)

def test_single_step_controllers_agree(control_model):
    cfg = one_state_config(horizon=1, r_mat=[[1e-3]])
    state = GaussianState(np.zeros(1), np.array([[1e-6]]))
    ref = np.array([[0.1]])
    first, decision = gpmpc1.gpmpc1_step(control_model, state, np.zeros(1), ref, cfg)
    second, _, _ = gpmpc2.gpmpc2_step(control_model, state, np.zeros(1), ref, cfg)
    assert first[0] == pytest.approx(0.2, abs=0.05)
    assert second[0] == pytest.approx(first[0], abs=0.02)
    problem = gpmpc1.HorizonProblem(control_model, state, ref, cfg)
    assert decision.objective <= problem.objective(second) + 1e-9

def test_gpmpc1_predicted_means_respect_tightened_bounds(control_model):
    cfg = one_state_config(r_mat=[[1e-3]], x_max=[0.3])
    state = GaussianState(np.zeros(1), np.array([[1e-6]]))
    _, decision = gpmpc1.gpmpc1_step(control_model, state, np.zeros(1), np.full((2, 1), 10.0), cfg)
    margins = np.array([tightening_margin(np.diag(var), cfg) for var in decision.predicted_vars])
    upper = decision.predicted_means + margins
    assert np.all(upper <= 0.3 + 1e-7)
    assert upper.max() >= 0.3 - 1e-3

@pytest.mark.parametrize("controller_cls", [gpmpc1.Gpmpc1Controller, gpmpc2.Gpmpc2Controller])
def test_closed_loop_stays_at_zero(control_model, controller_cls, caplog):
    cfg = one_state_config()
    controller = controller_cls(control_model, cfg)
    ref = ReferenceTrajectory(np.zeros((5 + 2 + 1, 1)))
    with caplog.at_level(logging.WARNING):
        log = run_receding_horizon(controller, ShiftPlant(), ref, 5, cfg, seed=0)
    assert "Clamped the solver control" not in caplog.text
    assert len(log) == 5
    np.testing.assert_allclose(log.column("control"), 0.0, atol=1e-3)
    frame = log.to_frame()
    assert list(frame.columns) == [
        "k", "r_1", "u_1", "x_1", "y_1", "pred_mu_1", "pred_var_1",
        "cost", "lyapunov", "solver_iters", "solve_ms",
    ]
    assert frame["k"].tolist() == list(range(5))

def test_closed_loop_without_timing(control_model):
    cfg = one_state_config()
    ref = ReferenceTrajectory(np.zeros((3 + 2 + 1, 1)))
    log = run_receding_horizon(gpmpc2.Gpmpc2Controller(control_model, cfg), ShiftPlant(), ref, 3, cfg, 0, False)
    assert np.all(log.column("solve_ms") == 0.0)

def test_closed_loop_keeps_partial_log(control_model):
    cfg = one_state_config()
    ref = ReferenceTrajectory(np.zeros((5 + 2 + 1, 1)))
    with pytest.raises(ControllerError) as info:
        run_receding_horizon(FailingController(control_model, cfg, fail_at=2), ShiftPlant(), ref, 5, cfg, seed=0)
    assert info.value.step == 2
    assert len(info.value.log) == 2

def test_closed_loop_needs_long_reference(control_model):
    cfg = one_state_config()
    ref = ReferenceTrajectory(np.zeros((5 + 2, 1)))
    with pytest.raises(ValueError):
        run_receding_horizon(gpmpc2.Gpmpc2Controller(control_model, cfg), ShiftPlant(), ref, 5, cfg, seed=0)

def make_record(k, lyapunov, terminal_cost):
    return StepRecord(
        k=k, reference=np.zeros(1), control=np.zeros(1), state=np.zeros(1), output=np.zeros(1),
        pred_mean=np.zeros(1), pred_var=np.zeros(1), cost=0.0, lyapunov=lyapunov,
        terminal_cost=terminal_cost, solver_iters=0, solve_ms=0.0, planned_controls=np.zeros((1, 1)),
    )

def test_lyapunov_flags_rise():
    log = TrajectoryLog((0,), [make_record(0, 3.0, 0.5), make_record(1, 2.0, 0.5), make_record(2, 5.0, 0.5)])
    report = lyapunov_diagnostic(log, one_state_config())
    assert report.flags.tolist() == [False, False, True]
    assert report.violations.tolist() == [2]

def test_lyapunov_allows_terminal_stage():
    log = TrajectoryLog((0,), [make_record(0, 1.0, 0.0), make_record(1, 1.4, 0.5)])
    assert lyapunov_diagnostic(log, one_state_config()).violations.size == 0
