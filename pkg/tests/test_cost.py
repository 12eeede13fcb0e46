import logging

import numpy as np
import pytest

from gpmpcbench.control import cost
from gpmpcbench.control.config import MpcConfig, ReferenceTrajectory, TighteningMode, VarianceWeight
from gpmpcbench.errors import InfeasibleConstraintsError

def make_config(**overrides):
    options = dict(
        horizon=1, q_mat=np.eye(2), r_mat=np.eye(1),
        u_min=np.array([-1.0]), u_max=np.array([1.0]), x_min=None, x_max=None,
    )
    options.update(overrides)
    return MpcConfig(**options)

def test_stage_cost():
    value = cost.stage_cost(np.array([1.0, 2.0]), np.diag([4.0, 5.0]), np.array([3.0]), np.zeros(2), make_config())
    assert value == pytest.approx(23.0)

def test_expected_cost_sums_stages():
    cfg = make_config(q_mat=np.diag([1.0, 2.0]), r_mat=[[0.5]])
    means = np.array([[1.0, 0.0], [0.0, 1.0]])
    covs = np.array([np.eye(2), np.zeros((2, 2))])
    controls = np.array([[2.0], [0.0]])
    ref = np.zeros((2, 2))
    assert cost.expected_cost(means, covs, controls, ref, cfg) == pytest.approx((1 + 2 + 3) + 2)

def test_expected_cost_lengths_must_match():
    with pytest.raises(ValueError):
        cost.expected_cost(np.zeros((2, 2)), np.zeros((1, 2, 2)), np.zeros((2, 1)), np.zeros((2, 2)), make_config())

def test_tightening_by_variance():
    lower, upper = cost.tighten_constraints(
        (np.array([-1.0, -2.0]), np.array([1.0, 2.0])), np.diag([0.25, 0.5]), make_config(),
    )
    np.testing.assert_allclose(lower, [-0.5, -1.0])
    np.testing.assert_allclose(upper, [0.5, 1.0])

def test_tightening_by_standard_deviation():
    cfg = make_config(tightening_mode=TighteningMode.TWO_STD)
    lower, upper = cost.tighten_constraints((np.array([-3.0, -3.0]), np.array([3.0, 3.0])), np.diag([0.25, 1.0]), cfg)
    np.testing.assert_allclose(lower, [-2.0, -1.0])
    np.testing.assert_allclose(upper, [2.0, 1.0])

def test_tightening_keeps_infinite_bounds():
    lower, upper = cost.tighten_constraints(
        (np.array([-np.inf, -1.0]), np.array([np.inf, 1.0])), np.diag([9.0, 0.1]), make_config(),
    )
    assert lower[0] == -np.inf and upper[0] == np.inf
    assert upper[1] == pytest.approx(0.8)

def test_crossing_bounds_name_the_dimension():
    with pytest.raises(InfeasibleConstraintsError) as info:
        cost.tighten_constraints(
            (np.array([-1.0, -1.0]), np.array([1.0, 1.0])), np.diag([0.25, 1.0]), make_config(), step=3,
        )
    assert info.value.dimension == 1
    assert info.value.step == 3

def test_config_defaults():
    cfg = make_config()
    assert cfg.state_dim == 2 and cfg.control_dim == 1
    assert np.all(np.isinf(cfg.x_max))
    assert cfg.variance_weight is VarianceWeight.TRACE
    assert cfg.tightening_mode is TighteningMode.PAPER_2SIGMA_VARIANCE

def test_config_accepts_enum_values():
    cfg = make_config(variance_weight="diagonal", tightening_mode="two-std")
    assert cfg.variance_weight is VarianceWeight.DIAGONAL
    assert cfg.tightening_mode is TighteningMode.TWO_STD

def test_applied_control_warns_when_clamping(caplog):
    cfg = make_config()
    with caplog.at_level(logging.WARNING):
        assert cfg.applied_control(np.array([1.0 + 1e-12]))[0] == 1.0
    assert not caplog.records
    with caplog.at_level(logging.WARNING):
        assert cfg.applied_control(np.array([1.5]))[0] == 1.0
    assert "Clamped the solver control" in caplog.text

def test_config_allows_pinned_control():
    cfg = make_config(u_min=[0.3], u_max=[0.3])
    np.testing.assert_array_equal(cfg.clamp_control(np.array([1.0])), [0.3])

@pytest.mark.parametrize(
    "overrides",
    [
        {"horizon": 0},
        {"horizon": 2.0},
        {"q_mat": np.diag([1.0, -1.0])},
        {"q_mat": np.array([[1.0, 1.0], [0.0, 1.0]])},
        {"r_mat": np.zeros((1, 1))},
        {"u_min": [1.0], "u_max": [0.0]},
        {"u_max": [np.inf]},
        {"u_min": [0.0, 0.0]},
        {"x_min": [0.0, 0.0], "x_max": [1.0, 0.0]},
        {"confidence": 0.9},
        {"variance_weight": "other"},
    ],
)
def test_config_rejects(overrides):
    with pytest.raises(ValueError):
        make_config(**overrides)

def test_reference_window():
    ref = ReferenceTrajectory(np.arange(10.0).reshape(5, 2))
    assert len(ref) == 5
    np.testing.assert_array_equal(ref.window(1, 3), [[2.0, 3.0], [4.0, 5.0], [6.0, 7.0]])
    with pytest.raises(ValueError):
        ref.window(3, 3)

def test_reference_must_be_finite():
    with pytest.raises(ValueError):
        ReferenceTrajectory(np.array([[0.0, np.nan]]))
