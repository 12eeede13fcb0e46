"""Feasibility-perturbed trust region SQP with BFGS Hessian updates"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
import pandas as pd

from .. import params
from ..errors import SqpError
from .active_set import QpProblem, solve_qp

@dataclass(frozen=True)
class NlpSpec:
    """min h(z) s.t. lower ≤ A·z ≤ upper and d(z) ≤ 0

    ``nonlinear_ineq`` maps z to (d(z), ∂d/∂z) and is linearised in each
    subproblem. ``nonlinear_values`` gives d(z) alone for feasibility checks
    at trial points and defaults to the first half of ``nonlinear_ineq``.
    """
    objective: Callable
    gradient: Callable
    linear_ineq: Optional[tuple]
    dims: int
    nonlinear_ineq: Optional[Callable] = None
    nonlinear_values: Optional[Callable] = None

    def __post_init__(self):
        if self.linear_ineq is not None:
            matrix, lower, upper = self.linear_ineq
            matrix = np.asarray(matrix, dtype=float).reshape(-1, self.dims)
            lower = np.broadcast_to(np.asarray(lower, dtype=float), (matrix.shape[0],)).copy()
            upper = np.broadcast_to(np.asarray(upper, dtype=float), (matrix.shape[0],)).copy()
            if np.any(lower > upper):
                raise ValueError("linear constraint lower bound exceeds upper bound")
            object.__setattr__(self, "linear_ineq", (matrix, lower, upper))

    def linear_rows(self, z):
        """Rows G·d ≤ rhs of the linear constraints shifted to z"""
        if self.linear_ineq is None:
            return np.zeros((0, self.dims)), np.zeros(0)
        matrix, lower, upper = self.linear_ineq
        values = matrix @ z
        upper_rows = np.isfinite(upper)
        lower_rows = np.isfinite(lower)
        g_mat = np.vstack((matrix[upper_rows], -matrix[lower_rows]))
        rhs = np.concatenate((upper[upper_rows] - values[upper_rows], values[lower_rows] - lower[lower_rows]))
        return g_mat, rhs

    def violation(self, z):
        """Largest constraint violation at z, zero when feasible"""
        worst = 0.0
        _, rhs = self.linear_rows(z)
        if rhs.size:
            worst = max(worst, float(np.max(-rhs)))
        if self.nonlinear_values is not None:
            values = self.nonlinear_values(z)
        elif self.nonlinear_ineq is not None:
            values, _ = self.nonlinear_ineq(z)
        else:
            values = None
        if values is not None and np.size(values):
            worst = max(worst, float(np.max(values)))
        return worst

@dataclass(frozen=True)
class TrustRegionState:
    radius: float
    radius_max: float
    tau: float
    tau1: float
    tau2: float
    hessian: np.ndarray

    def __post_init__(self):
        if not 0 < self.tau1 < self.tau2 < 1:
            raise ValueError("need 0 < tau1 < tau2 < 1")
        if not 0 < self.radius <= self.radius_max:
            raise ValueError("radius must lie in (0, radius_max]")
        hessian = np.asarray(self.hessian, dtype=float)
        if not np.allclose(hessian, hessian.T, rtol=0.0, atol=1e-10 * max(1.0, float(np.max(np.abs(hessian))))):
            raise ValueError("hessian must be symmetric")
        object.__setattr__(self, "hessian", 0.5 * (hessian + hessian.T))

@dataclass(frozen=True)
class SqpSettings:
    max_iter: int = params.SQP_MAX_ITER
    tau1: float = params.SQP_TAU1
    tau2: float = params.SQP_TAU2
    tau: float = params.SQP_TAU
    radius_max: float = params.SQP_RADIUS_MAX
    stop_tol: float = params.SQP_STOP_TOL
    initial_hessian: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.tau1 < self.tau2 < 1:
            raise ValueError("need 0 < tau1 < tau2 < 1")
        if not (self.tau > 0 and self.radius_max > 0 and self.stop_tol > 0):
            raise ValueError("tau, radius_max and stop_tol must be positive")

@dataclass(frozen=True)
class IterateRecord:
    iteration: int
    objective: float
    rho: float
    radius: float
    step_norm: float
    accepted: bool

def qp_subproblem(nlp, z, tr, grad=None):
    """Minimise ∇hᵀΔ + ½ΔᵀHΔ over linearised constraints and ‖Δ‖∞ ≤ γ"""
    grad = nlp.gradient(z) if grad is None else grad
    g_mat, rhs = nlp.linear_rows(z)
    blocks, rhs_blocks = [g_mat], [rhs]
    if nlp.nonlinear_ineq is not None:
        values, jacobian = nlp.nonlinear_ineq(z)
        blocks.append(np.asarray(jacobian, dtype=float).reshape(-1, nlp.dims))
        rhs_blocks.append(-np.asarray(values, dtype=float).reshape(-1))
    eye = np.eye(nlp.dims)
    blocks.extend((eye, -eye))
    rhs_blocks.extend((np.full(nlp.dims, tr.radius), np.full(nlp.dims, tr.radius)))

    # z is feasible up to rounding, so the zero step must be too
    prob = QpProblem(tr.hessian, grad, np.vstack(blocks), np.maximum(np.concatenate(rhs_blocks), 0.0))
    return solve_qp(prob, np.zeros(nlp.dims)).x

def predicted_decrease(grad, hessian, step):
    return float(-(grad @ step) - 0.5 * step @ hessian @ step)

def acceptability_ratio(nlp, z, step, tr, h_z=None, grad=None):
    """ρ = (h(z) − h(z + Δ)) / (−∇hᵀΔ − ½ΔᵀHΔ)

    Returns None when the predicted decrease is zero, which marks a
    stationary point.
    """
    h_z = nlp.objective(z) if h_z is None else h_z
    grad = nlp.gradient(z) if grad is None else grad
    predicted = predicted_decrease(grad, tr.hessian, step)
    if predicted == 0:
        return None
    return (h_z - nlp.objective(z + step)) / predicted

def bfgs_update(tr, dz, grad_diff):
    """Standard BFGS, skipped when the curvature condition fails"""
    hessian = tr.hessian
    curvature = float(grad_diff @ dz)
    if curvature <= params.BFGS_CURVATURE_TOL * np.linalg.norm(grad_diff) * np.linalg.norm(dz):
        logging.debug("Skipping BFGS update, curvature %.3g", curvature)
        return hessian
    h_dz = hessian @ dz
    updated = hessian - np.outer(h_dz, h_dz) / float(dz @ h_dz) + np.outer(grad_diff, grad_diff) / curvature
    return 0.5 * (updated + updated.T)

def solve_fpsqp(nlp, z0, settings=None):
    """Run FP-SQP from a feasible point, returns (z*, iterate history)"""
    settings = settings or SqpSettings()
    z = np.asarray(z0, dtype=float).copy()
    violation = nlp.violation(z)
    if violation > params.SQP_NONLINEAR_TOL:
        raise SqpError(f"Initial point violates constraints by {violation:.3g}")

    h_z = nlp.objective(z)
    grad = nlp.gradient(z)
    grad_norm = float(np.linalg.norm(grad))
    history = [IterateRecord(0, h_z, math.nan, grad_norm, 0.0, True)]
    if grad_norm == 0:
        return z, history

    hessian = settings.initial_hessian
    if hessian is None:
        hessian = max(1.0, grad_norm) * np.eye(nlp.dims)
    tr = TrustRegionState(
        radius=min(grad_norm, settings.radius_max), radius_max=settings.radius_max,
        tau=settings.tau, tau1=settings.tau1, tau2=settings.tau2, hessian=hessian,
    )

    for iteration in range(1, settings.max_iter + 1):
        step = qp_subproblem(nlp, z, tr, grad)
        predicted = predicted_decrease(grad, tr.hessian, step)
        if predicted <= settings.stop_tol * (1 + abs(h_z)):
            break

        trial = z + step
        if nlp.violation(trial) > params.SQP_NONLINEAR_TOL:
            rho = -math.inf
        else:
            h_trial = nlp.objective(trial)
            rho = (h_z - h_trial) / predicted

        accepted = rho >= tr.tau1
        if accepted:
            grad_trial = nlp.gradient(trial)
            grad_diff = grad_trial - grad
            hessian = bfgs_update(tr, step, grad_diff)
            diff_norm = float(np.linalg.norm(grad_diff))
            tau = float(np.linalg.norm(step)) / diff_norm if diff_norm > 0 else math.inf
            cap = tr.radius_max if rho >= tr.tau2 else tr.radius
            grad_norm = float(np.linalg.norm(grad_trial))
            radius = min(tau * grad_norm, cap) if grad_norm > 0 else 0.0
            z, h_z, grad = trial, h_trial, grad_trial
        else:
            hessian = tr.hessian
            tau = tr.tau / 4
            radius = min(tau * grad_norm, tr.radius / 4)
            logging.debug("Rejected SQP step %d with rho %.3g", iteration, rho)

        history.append(IterateRecord(iteration, h_z, rho, radius, float(np.linalg.norm(step)), accepted))
        if radius < params.SQP_RADIUS_MIN:
            break
        tr = replace(tr, radius=radius, tau=tau if math.isfinite(tau) else tr.tau, hessian=hessian)
    else:
        logging.info("FP-SQP stopped at the iteration cap of %d", settings.max_iter)

    return z, history

def history_frame(history):
    """Iterate log as a table for convergence plots"""
    return pd.DataFrame(
        {
            "iteration": [rec.iteration for rec in history],
            "h": [rec.objective for rec in history],
            "rho": [rec.rho for rec in history],
            "gamma": [rec.radius for rec in history],
            "step_norm": [rec.step_norm for rec in history],
        }
    )

def write_history(history, path):
    history_frame(history).to_csv(path, index=False, float_format=params.CSV_FLOAT_FORMAT)
