import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpmpcbench.errors import SqpError
from gpmpcbench.solvers import fpsqp
from gpmpcbench.solvers.active_set import QpProblem, solve_qp

def shifted_square(target=3.0, box=None):
    return fpsqp.NlpSpec(
        objective=lambda z: float((z[0] - target) ** 2),
        gradient=lambda z: np.array([2.0 * (z[0] - target)]),
        linear_ineq=None if box is None else (np.eye(1), box[0], box[1]),
        dims=1,
    )

def region(radius=10.0, hessian=2.0):
    return fpsqp.TrustRegionState(
        radius=radius, radius_max=10.0, tau=1.0, tau1=0.1, tau2=0.75, hessian=np.array([[hessian]]),
    )

def test_subproblem_unconstrained_newton_step():
    step = fpsqp.qp_subproblem(shifted_square(), np.array([1.0]), region())
    assert step[0] == pytest.approx(2.0)

def test_subproblem_respects_linear_bound():
    step = fpsqp.qp_subproblem(shifted_square(box=(-5.0, 2.0)), np.array([1.0]), region())
    assert step[0] == pytest.approx(1.0)

def test_subproblem_respects_radius():
    step = fpsqp.qp_subproblem(shifted_square(), np.array([1.0]), region(radius=0.5))
    assert step[0] == pytest.approx(0.5)

def test_ratio_is_one_for_exact_model():
    rho = fpsqp.acceptability_ratio(shifted_square(), np.array([1.0]), np.array([1.5]), region())
    assert rho == pytest.approx(1.0)

def test_ratio_negative_when_objective_grows():
    nlp = shifted_square(target=0.0)
    rho = fpsqp.acceptability_ratio(nlp, np.array([1.0]), np.array([-3.0]), region(hessian=0.5))
    assert rho == pytest.approx(-0.8)

def test_ratio_none_at_stationary_point():
    nlp = shifted_square(target=0.0)
    assert fpsqp.acceptability_ratio(nlp, np.array([0.0]), np.array([0.0]), region()) is None

def test_region_validation():
    with pytest.raises(ValueError):
        region(radius=0.0)
    with pytest.raises(ValueError):
        fpsqp.TrustRegionState(1.0, 10.0, 1.0, 0.8, 0.2, np.eye(1))
    with pytest.raises(ValueError):
        fpsqp.TrustRegionState(1.0, 10.0, 1.0, 0.1, 0.75, np.array([[1.0, 2.0], [0.0, 1.0]]))

def test_settings_validation():
    with pytest.raises(ValueError):
        fpsqp.SqpSettings(max_iter=0)
    with pytest.raises(ValueError):
        fpsqp.SqpSettings(stop_tol=0.0)

def test_bfgs_keeps_exact_hessian():
    hessian = np.array([[3.0, 1.0], [1.0, 2.0]])
    tr = fpsqp.TrustRegionState(1.0, 10.0, 1.0, 0.1, 0.75, hessian)
    dz = np.array([0.3, -0.7])
    np.testing.assert_allclose(fpsqp.bfgs_update(tr, dz, hessian @ dz), hessian, atol=1e-12)

def test_bfgs_skips_negative_curvature():
    tr = fpsqp.TrustRegionState(1.0, 10.0, 1.0, 0.1, 0.75, np.eye(2))
    dz = np.array([1.0, 0.5])
    np.testing.assert_array_equal(fpsqp.bfgs_update(tr, dz, -dz), np.eye(2))

@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 32 - 1))
def test_bfgs_satisfies_secant_condition(seed):
    rng = np.random.default_rng(seed)
    basis = rng.standard_normal((3, 3))
    target = basis.T @ basis + np.eye(3)
    tr = fpsqp.TrustRegionState(1.0, 10.0, 1.0, 0.1, 0.75, np.eye(3))
    dz = rng.standard_normal(3)
    grad_diff = target @ dz
    updated = fpsqp.bfgs_update(tr, dz, grad_diff)
    np.testing.assert_allclose(updated @ dz, grad_diff, rtol=1e-8, atol=1e-8)
    assert np.all(np.linalg.eigvalsh(updated) > 0)

def test_convex_box_qp():
    hessian = np.array([[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]])
    linear = np.array([2.0, -3.0, 0.5])
    nlp = fpsqp.NlpSpec(
        objective=lambda z: float(0.5 * z @ hessian @ z + linear @ z),
        gradient=lambda z: hessian @ z + linear,
        linear_ineq=(np.eye(3), -1.0, 1.0),
        dims=3,
    )
    z_opt, history = fpsqp.solve_fpsqp(nlp, np.zeros(3), fpsqp.SqpSettings(initial_hessian=hessian))
    exact = solve_qp(QpProblem(hessian, linear, np.vstack((np.eye(3), -np.eye(3))), np.ones(6)), np.zeros(3)).x
    np.testing.assert_allclose(z_opt, exact, atol=1e-6)
    assert z_opt[1] == pytest.approx(1.0)
    assert len(history) - 1 <= 10

def test_stationary_start_returns_immediately():
    z_opt, history = fpsqp.solve_fpsqp(shifted_square(target=0.0), np.array([0.0]))
    assert z_opt[0] == 0.0
    assert len(history) == 1

def test_rosenbrock_against_bound():
    nlp = fpsqp.NlpSpec(
        objective=lambda z: float((1 - z[0]) ** 2 + 100 * (z[1] - z[0] ** 2) ** 2),
        gradient=lambda z: np.array([
            -2 * (1 - z[0]) - 400 * z[0] * (z[1] - z[0] ** 2),
            200 * (z[1] - z[0] ** 2),
        ]),
        linear_ineq=(np.eye(2), [-2.0, -2.0], [0.5, 2.0]),
        dims=2,
    )
    z_opt, history = fpsqp.solve_fpsqp(nlp, np.zeros(2), fpsqp.SqpSettings(max_iter=500, stop_tol=1e-14))
    assert z_opt[0] == pytest.approx(0.5, abs=1e-4)
    assert z_opt[1] == pytest.approx(0.25, abs=1e-2)
    assert nlp.violation(z_opt) <= 1e-8
    assert len(history) <= 501

def test_nonlinear_constraint_stops_on_boundary():
    nlp = fpsqp.NlpSpec(
        objective=lambda z: float((z[0] - 2.0) ** 2),
        gradient=lambda z: np.array([2.0 * (z[0] - 2.0)]),
        linear_ineq=None,
        dims=1,
        nonlinear_ineq=lambda z: (np.array([z[0] ** 2 - 1.0]), np.array([[2.0 * z[0]]])),
    )
    z_opt, _ = fpsqp.solve_fpsqp(nlp, np.array([0.0]))
    assert z_opt[0] == pytest.approx(1.0, abs=1e-8)

def test_infeasible_start_rejected():
    with pytest.raises(SqpError):
        fpsqp.solve_fpsqp(shifted_square(box=(-1.0, 1.0)), np.array([2.0]))

def test_linear_bounds_must_be_ordered():
    with pytest.raises(ValueError):
        shifted_square(box=(1.0, -1.0))

def test_history_frame(tmp_path):
    _, history = fpsqp.solve_fpsqp(shifted_square(), np.array([0.0]))
    frame = fpsqp.history_frame(history)
    assert list(frame.columns) == ["iteration", "h", "rho", "gamma", "step_norm"]
    assert frame["iteration"].tolist() == list(range(len(history)))
    assert math.isnan(frame["rho"].iloc[0])
    fpsqp.write_history(history, tmp_path / "sqp.csv")
    assert (tmp_path / "sqp.csv").read_text().startswith("iteration,h,rho,gamma,step_norm")
