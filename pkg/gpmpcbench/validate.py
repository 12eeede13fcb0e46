"""Cross-module oracle suites run by the validate command"""

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from . import params
from .control.condense import build_condensed_qp, direct_cost
from .control.config import MpcConfig
from .gp import propagation
from .gp.linearization import ExtendedLocalModel, ExtendedState, extended_map, finite_diff_jacobian, linearize_extended
from .gp.model import GpDataset, GpHyperparams, GpModel, gram_matrix, kernel_matrix, predict_many
from .solvers.active_set import QpProblem, solve_qp
from .solvers.fpsqp import NlpSpec, SqpSettings, solve_fpsqp

SUITES = (
    "gp_dense_solve",
    "moment_matching_mc",
    "jacobian_fd",
    "qp_enumeration",
    "condensation_equality",
    "fpsqp_convex",
)

@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    def to_document(self):
        return {
            "name": self.name,
            "passed": self.passed,
            "measured": self.measured,
            "tolerance": self.tolerance,
            "detail": self.detail,
        }

def toy_model(seed=0, size=30):
    """Two state, one control GP with fixed hyperparameters"""
    rng = params.derive_rng(seed, params.SEED_KEY_VALIDATE, 0)
    inputs = rng.uniform(-1.5, 1.5, size=(size, 3))
    targets = np.column_stack((
        0.5 * np.sin(inputs[:, 0]) + 0.3 * inputs[:, 2],
        0.4 * np.cos(inputs[:, 1]) * inputs[:, 0] - 0.2 * inputs[:, 2],
    )) + 0.05 * rng.standard_normal((size, 2))
    hyperparams = [
        GpHyperparams(0.5, 1e-2, np.array([1.2, 0.8, 1.0])),
        GpHyperparams(0.3, 2e-2, np.array([0.7, 1.1, 0.9])),
    ]
    return GpModel.from_hyperparams(GpDataset(inputs, targets), hyperparams)

def _toy_state():
    return propagation.GaussianState(np.array([0.2, -0.3]), np.array([[0.05, 0.01], [0.01, 0.03]]))

def check_gp_dense_solve(model, rng):
    """Predictions against a dense solve of the noisy Gram system"""
    points = rng.uniform(-1.5, 1.5, size=(10, model.input_dim))
    means, variances = predict_many(model, points)
    worst = 0.0
    for dim, out in enumerate(model.outputs):
        gram = gram_matrix(model.dataset, out.hyperparams)
        cross = kernel_matrix(points, model.dataset.inputs, out.hyperparams)
        dense_mean = cross @ np.linalg.solve(gram, model.dataset.targets[:, dim])
        dense_var = out.hyperparams.signal_variance - np.sum(cross * np.linalg.solve(gram, cross.T).T, axis=1)
        worst = max(
            worst,
            float(np.max(np.abs(means[:, dim] - dense_mean) / (1 + np.abs(dense_mean)))),
            float(np.max(np.abs(variances[:, dim] - np.maximum(dense_var, 0.0)))),
        )
    return worst

def random_state(rng, dim):
    """Gaussian state with a random mean in [−1, 1] and a random covariance"""
    factor = 0.2 * rng.standard_normal((dim, dim))
    return propagation.GaussianState(rng.uniform(-1.0, 1.0, dim), factor @ factor.T)

def check_moment_matching_mc(model, seed, samples, cases=params.VALIDATE_MC_CASES, jobs=1):
    """Largest standardized deviation from the sampled moments over random inputs"""
    rng = params.derive_rng(seed, params.SEED_KEY_VALIDATE, 2)
    control_dim = model.control_dim
    worst = 0.0
    for case in range(cases):
        state = random_state(rng, model.state_dim)
        control = rng.uniform(-1.0, 1.0, control_dim)
        x_input = propagation.GaussianInput.from_state(state, control)
        pred = propagation.predict_uncertain(model, x_input)
        empirical = propagation.mc_oracle(model, x_input, samples, [seed, case], jobs=jobs)
        worst = max(worst, propagation.moment_errors(pred, empirical))
    return worst

def check_jacobian_fd(model):
    """Analytic against central difference Jacobians of the mean and extended maps"""
    state = _toy_state()
    control = np.array([0.4])
    _, jac = propagation.propagate_state_jacobians(model, state, control)
    point = np.concatenate((state.mean, control))

    def next_mean(values):
        shifted = propagation.GaussianState(values[:2], state.cov)
        return propagation.propagate_state(model, shifted, values[2:]).mean

    numeric = finite_diff_jacobian(next_mean, point)
    analytic = np.hstack((jac.mean_mean, jac.mean_control))
    worst = float(np.max(np.abs(numeric - analytic)) / max(1.0, float(np.max(np.abs(numeric)))))

    ext = ExtendedState.from_gaussian(state)
    local = linearize_extended(model, ext, control)
    numeric_a = finite_diff_jacobian(lambda vec: extended_map(model, vec, control), ext.vec)
    numeric_b = finite_diff_jacobian(lambda u: extended_map(model, ext.vec, u), control)
    for approx, exact in ((numeric_a, local.a_mat), (numeric_b, local.b_mat)):
        worst = max(worst, float(np.max(np.abs(approx - exact)) / max(1.0, float(np.max(np.abs(approx))))))
    return worst

def random_qp(rng, num_vars=3, num_constraints=6):
    """Strictly convex QP with the origin strictly feasible"""
    basis = rng.standard_normal((num_vars, num_vars))
    return QpProblem(
        phi=basis.T @ basis + np.eye(num_vars),
        psi=3.0 * rng.standard_normal(num_vars),
        g_mat=rng.standard_normal((num_constraints, num_vars)),
        g_rhs=rng.uniform(0.1, 1.0, num_constraints),
    )

def enumerate_qp(prob):
    """Brute force minimiser over every candidate active set"""
    best_x, best_value = None, np.inf
    size = prob.num_vars
    for count in range(size + 1):
        for active in itertools.combinations(range(prob.num_constraints), count):
            rows = prob.g_mat[list(active)]
            if count and np.linalg.matrix_rank(rows) < count:
                continue
            kkt = np.block([[prob.phi, rows.T], [rows, np.zeros((count, count))]])
            rhs = np.concatenate((-prob.psi, prob.g_rhs[list(active)]))
            x = np.linalg.solve(kkt, rhs)[:size]
            if prob.is_feasible(x, tol=1e-9):
                value = prob.objective(x)
                if value < best_value:
                    best_x, best_value = x, value
    return best_x

def check_qp_enumeration(rng, problems=params.VALIDATE_QP_PROBLEMS):
    """Largest distance to the enumerated minimiser over QPs of random size"""
    worst = 0.0
    for _ in range(problems):
        num_vars = int(rng.integers(1, params.VALIDATE_QP_MAX_VARS + 1))
        prob = random_qp(rng, num_vars, int(rng.integers(1, params.VALIDATE_QP_MAX_CONSTRAINTS + 1)))
        solution = solve_qp(prob, np.zeros(prob.num_vars))
        worst = max(worst, float(np.max(np.abs(solution.x - enumerate_qp(prob)))))
    return worst

def check_condensation_equality(rng, horizon=3):
    """Condensed objective against the cost of the states it predicts"""
    n, m = 2, 1
    ext_dim = n + n * n
    local = ExtendedLocalModel(
        a_mat=0.3 * rng.standard_normal((ext_dim, ext_dim)),
        b_mat=rng.standard_normal((ext_dim, m)),
        op_state=np.zeros(ext_dim),
        op_control=np.zeros(m),
    )
    cfg = MpcConfig(
        horizon=horizon, q_mat=np.diag([1.0, 2.0]), r_mat=np.array([[0.5]]),
        u_min=np.array([-10.0]), u_max=np.array([10.0]), x_min=None, x_max=None,
    )
    s_k = rng.standard_normal(ext_dim)
    cqp = build_condensed_qp(
        local, s_k, 0.1 * rng.standard_normal(ext_dim), rng.standard_normal(m),
        rng.standard_normal((horizon, n)), cfg,
    )
    worst = 0.0
    for _ in range(5):
        delta_u = rng.standard_normal(horizon * m)
        direct = direct_cost(cqp, delta_u, cfg)
        worst = max(worst, abs(cqp.objective(delta_u) - direct) / (1 + abs(direct)))
    return worst

def check_fpsqp_convex():
    """Exact Hessian FP-SQP against the active set solution of the same box QP"""
    hessian = np.array([[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]])
    linear = np.array([2.0, -3.0, 0.5])
    nlp = NlpSpec(
        objective=lambda z: float(0.5 * z @ hessian @ z + linear @ z),
        gradient=lambda z: hessian @ z + linear,
        linear_ineq=(np.eye(3), -np.ones(3), np.ones(3)),
        dims=3,
    )
    z_opt, history = solve_fpsqp(nlp, np.zeros(3), SqpSettings(initial_hessian=hessian, stop_tol=1e-14))
    exact = solve_qp(
        QpProblem(hessian, linear, np.vstack((np.eye(3), -np.eye(3))), np.ones(6)), np.zeros(3)
    ).x
    return float(np.max(np.abs(z_opt - exact))), len(history) - 1

def run_validation(seed=0, samples=params.VALIDATE_MC_SAMPLES, jobs=1):
    """Every suite once, in SUITES order"""
    rng = params.derive_rng(seed, params.SEED_KEY_VALIDATE, 1)
    model = toy_model(seed)
    results = []

    error = check_gp_dense_solve(model, rng)
    results.append(SuiteResult("gp_dense_solve", error <= 1e-8, error, 1e-8))

    error = check_moment_matching_mc(model, seed, samples, jobs=jobs)
    results.append(SuiteResult(
        "moment_matching_mc", error <= params.VALIDATE_MC_TOL, error, params.VALIDATE_MC_TOL,
        f"{params.VALIDATE_MC_CASES} cases of {samples} samples, standardized deviation",
    ))

    error = check_jacobian_fd(model)
    results.append(SuiteResult("jacobian_fd", error <= 1e-4, error, 1e-4))

    error = check_qp_enumeration(rng)
    results.append(SuiteResult("qp_enumeration", error <= params.VALIDATE_QP_TOL, error, params.VALIDATE_QP_TOL))

    error = check_condensation_equality(rng)
    results.append(SuiteResult("condensation_equality", error <= 1e-9, error, 1e-9))

    error, iterations = check_fpsqp_convex()
    results.append(SuiteResult(
        "fpsqp_convex", error <= 1e-6 and iterations <= 10, error, 1e-6, f"{iterations} iterations",
    ))

    for result in results:
        logging.info("Suite %s %s (%.3g, tolerance %.3g)",
                     result.name, "passed" if result.passed else "FAILED", result.measured, result.tolerance)
    return results

def validation_document(results):
    return {
        "passed": all(result.passed for result in results),
        "suites": [result.to_document() for result in results],
    }
