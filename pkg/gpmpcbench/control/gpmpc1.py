"""GPMPC1: FP-SQP on the expected cost of the moment matched rollout

The decision vector is the control sequence U; means and covariances are
eliminated through the rollout and their forward sensitivities give the
exact gradient and the linearised chance constraints.
"""

import logging
import time
from dataclasses import replace

import numpy as np

from .. import params
from ..errors import SqpError
from ..gp.propagation import GaussianState, propagate_state, propagate_state_jacobians
from ..solvers.fpsqp import NlpSpec, SqpSettings, solve_fpsqp
from .config import ControlDecision, TighteningMode
from .cost import stage_cost, tighten_constraints, tightening_margin

class HorizonProblem:
    """Rollout of one control sequence, cached per z

    Objective values and constraint values only need the moment recursion;
    the forward sensitivities are computed when a gradient or a constraint
    Jacobian is asked for.
    """
    def __init__(self, model, state, ref, cfg):
        self._model = model
        self._state = state
        self._ref = np.atleast_2d(np.asarray(ref, dtype=float))
        self._cfg = cfg
        self._moments_cache = (None, None)
        self._sensitivity_cache = (None, None)
        if self._ref.shape != (cfg.horizon, cfg.state_dim):
            raise ValueError(f"reference window has shape {self._ref.shape}, expected {(cfg.horizon, cfg.state_dim)}")

    @property
    def ref(self):
        return self._ref

    @property
    def dims(self):
        return self._cfg.horizon * self._cfg.control_dim

    def _controls(self, z):
        return np.asarray(z, dtype=float).reshape(self._cfg.horizon, self._cfg.control_dim)

    def _rollout(self, z):
        """(cost, means, covs, controls) without derivatives"""
        key = np.asarray(z, dtype=float).tobytes()
        if self._sensitivity_cache[0] == key:
            return self._sensitivity_cache[1][:4]
        if self._moments_cache[0] == key:
            return self._moments_cache[1]

        controls = self._controls(z)
        state = self._state
        cost, means, covs = 0.0, [], []
        for step, control in enumerate(controls):
            state = propagate_state(self._model, state, control)
            cost += stage_cost(state.mean, state.cov, control, self._ref[step], self._cfg)
            means.append(state.mean)
            covs.append(state.cov)
        result = (cost, np.array(means), np.array(covs), controls)
        self._moments_cache = (key, result)
        return result

    def _sensitivities(self, z):
        """(cost, means, covs, controls, grad, d_means, d_covs)"""
        key = np.asarray(z, dtype=float).tobytes()
        if self._sensitivity_cache[0] == key:
            return self._sensitivity_cache[1]

        cfg = self._cfg
        n, m = cfg.state_dim, cfg.control_dim
        controls = self._controls(z)
        mean, cov = self._state.mean, self._state.cov
        d_mean = np.zeros((n, self.dims))
        d_cov = np.zeros((n, n, self.dims))
        cost, grad = 0.0, np.zeros(self.dims)
        means, covs, d_means, d_covs = [], [], [], []

        for step, control in enumerate(controls):
            nxt, jac = propagate_state_jacobians(self._model, GaussianState(mean, cov), control)
            cols = slice(step * m, (step + 1) * m)
            new_d_mean = jac.mean_mean @ d_mean + np.einsum("akl,klp->ap", jac.mean_cov, d_cov)
            new_d_mean[:, cols] += jac.mean_control
            new_d_cov = np.einsum("ijk,kp->ijp", jac.cov_mean, d_mean) \
                + np.einsum("ijkl,klp->ijp", jac.cov_cov, d_cov)
            new_d_cov[:, :, cols] += jac.cov_control
            mean, cov, d_mean, d_cov = nxt.mean, nxt.cov, new_d_mean, new_d_cov

            cost += stage_cost(mean, cov, control, self._ref[step], cfg)
            grad += 2.0 * (mean - self._ref[step]) @ cfg.q_mat @ d_mean \
                + np.einsum("kl,klp->p", cfg.q_mat, d_cov)
            grad[cols] += 2.0 * cfg.r_mat @ control
            means.append(mean)
            covs.append(cov)
            d_means.append(d_mean)
            d_covs.append(d_cov)

        result = (cost, np.array(means), np.array(covs), controls, grad, d_means, d_covs)
        self._sensitivity_cache = (key, result)
        return result

    def objective(self, z):
        return self._rollout(z)[0]

    def gradient(self, z):
        return self._sensitivities(z)[4].copy()

    def gauss_newton_hessian(self, z):
        """2·Σ ∂μᵀQ∂μ + 2·blkdiag(R), positive definite since R is"""
        cfg = self._cfg
        _, _, _, _, _, d_means, _ = self._sensitivities(z)
        hessian = 2.0 * np.kron(np.eye(cfg.horizon), cfg.r_mat)
        for d_mean in d_means:
            hessian += 2.0 * d_mean.T @ cfg.q_mat @ d_mean
        return 0.5 * (hessian + hessian.T)

    def moments(self, z):
        """Predicted means, covariances and controls along the horizon"""
        _, means, covs, controls = self._rollout(z)
        return means, covs, controls

    def has_state_constraints(self):
        return bool(np.any(np.isfinite(self._cfg.x_min)) or np.any(np.isfinite(self._cfg.x_max)))

    def state_constraint_values(self, z):
        """Tightened bounds as d(z) ≤ 0"""
        cfg = self._cfg
        _, means, covs, _ = self._rollout(z)
        values = []
        for mean, cov in zip(means, covs):
            margin = tightening_margin(cov, cfg)
            for dim in range(cfg.state_dim):
                if np.isfinite(cfg.x_max[dim]):
                    values.append(mean[dim] + margin[dim] - cfg.x_max[dim])
                if np.isfinite(cfg.x_min[dim]):
                    values.append(cfg.x_min[dim] - mean[dim] + margin[dim])
        return np.array(values)

    def state_constraints(self, z):
        """d(z) together with its Jacobian"""
        cfg = self._cfg
        _, _, covs, _, _, d_means, d_covs = self._sensitivities(z)
        rows = []
        for cov, d_mean, d_cov in zip(covs, d_means, d_covs):
            d_var = np.einsum("iip->ip", d_cov)
            if cfg.tightening_mode is TighteningMode.TWO_STD:
                std = np.maximum(np.sqrt(np.maximum(np.diag(cov), 0.0)), 1e-9)
                d_margin = params.TIGHTENING_FACTOR * d_var / (2.0 * std[:, None])
            else:
                d_margin = params.TIGHTENING_FACTOR * d_var
            for dim in range(cfg.state_dim):
                if np.isfinite(cfg.x_max[dim]):
                    rows.append(d_mean[dim] + d_margin[dim])
                if np.isfinite(cfg.x_min[dim]):
                    rows.append(-d_mean[dim] + d_margin[dim])
        return self.state_constraint_values(z), np.array(rows).reshape(-1, self.dims)

    def check_tightening(self, z):
        """Raise InfeasibleConstraintsError when tightened bounds cross along the rollout"""
        _, _, covs, _ = self._rollout(z)
        for step, cov in enumerate(covs, start=1):
            tighten_constraints((self._cfg.x_min, self._cfg.x_max), cov, self._cfg, step=step)

def _initial_sequence(nlp, problem, cfg, u_prev, warm_plan):
    held = np.tile(cfg.clamp_control(np.asarray(u_prev, dtype=float)), cfg.horizon)
    candidates = []
    if warm_plan is not None:
        warm_plan = np.asarray(warm_plan, dtype=float).reshape(cfg.horizon, -1)
        candidates.append(np.vstack((warm_plan[1:], warm_plan[-1:])).ravel())
    candidates.append(held)
    for candidate in candidates:
        problem.check_tightening(candidate)
        if nlp.violation(candidate) <= params.SQP_NONLINEAR_TOL:
            return candidate
    raise SqpError("No feasible initial control sequence for the tightened constraints")

def gpmpc1_step(model, state, u_prev, ref, cfg, settings=None, warm_plan=None):
    """Returns (u_k, ControlDecision)"""
    started = time.perf_counter()
    problem = HorizonProblem(model, state, ref, cfg)
    nlp = NlpSpec(
        objective=problem.objective,
        gradient=problem.gradient,
        linear_ineq=(np.eye(problem.dims), np.tile(cfg.u_min, cfg.horizon), np.tile(cfg.u_max, cfg.horizon)),
        dims=problem.dims,
        nonlinear_ineq=problem.state_constraints if problem.has_state_constraints() else None,
        nonlinear_values=problem.state_constraint_values if problem.has_state_constraints() else None,
    )
    z0 = _initial_sequence(nlp, problem, cfg, u_prev, warm_plan)
    settings = settings or SqpSettings()
    if settings.initial_hessian is None:
        settings = replace(settings, initial_hessian=problem.gauss_newton_hessian(z0))
    z_opt, history = solve_fpsqp(nlp, z0, settings)

    means, covs, controls = problem.moments(z_opt)
    u_k = cfg.applied_control(controls[0])
    decision = ControlDecision(
        control=u_k,
        planned_controls=controls,
        predicted_means=means,
        predicted_vars=np.diagonal(covs, axis1=1, axis2=2).copy(),
        objective=problem.objective(z_opt),
        terminal_cost=stage_cost(means[-1], covs[-1], controls[-1], problem.ref[-1], cfg),
        iterations=len(history) - 1,
        solve_ms=1e3 * (time.perf_counter() - started),
    )
    logging.debug("GPMPC1 solved in %d SQP iterations, cost %.6g", decision.iterations, decision.objective)
    return u_k, decision

class Gpmpc1Controller:
    """Keeps the previous plan for a shifted warm start"""
    name = "gpmpc1"

    def __init__(self, model, cfg, settings=None):
        self._model = model
        self._cfg = cfg
        self._settings = settings or SqpSettings()
        self.reset()

    @property
    def model(self):
        return self._model

    @property
    def cfg(self):
        return self._cfg

    def reset(self):
        self._plan = None

    def step(self, state, u_prev, ref):
        _, decision = gpmpc1_step(
            self._model, state, u_prev, ref, self._cfg, settings=self._settings, warm_plan=self._plan
        )
        self._plan = decision.planned_controls
        return decision
