"""Primal active set method for dense strictly convex QPs

    minimise ½xᵀΦx + ψᵀx  subject to  G̃x ≤ Δ̃
"""

import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .. import params
from ..errors import KktSolveError, QpInfeasibleError, QpIterationLimitError

@dataclass(frozen=True)
class QpProblem:
    """Quadratic objective with stacked inequality rows"""
    phi: np.ndarray
    psi: np.ndarray
    g_mat: np.ndarray
    g_rhs: np.ndarray

    def __post_init__(self):
        phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        psi = np.asarray(self.psi, dtype=float).reshape(-1)
        size = psi.shape[0]
        g_mat = np.asarray(self.g_mat, dtype=float).reshape(-1, size)
        g_rhs = np.asarray(self.g_rhs, dtype=float).reshape(-1)
        if phi.shape != (size, size):
            raise ValueError(f"phi has shape {phi.shape} for {size} variables")
        if g_mat.shape[0] != g_rhs.shape[0]:
            raise ValueError(f"{g_mat.shape[0]} constraint rows but {g_rhs.shape[0]} right hand sides")
        if not np.allclose(phi, phi.T, rtol=0.0, atol=1e-10 * max(1.0, float(np.max(np.abs(phi))))):
            raise ValueError("phi is not symmetric")
        object.__setattr__(self, "phi", 0.5 * (phi + phi.T))
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "g_mat", g_mat)
        object.__setattr__(self, "g_rhs", g_rhs)

    @property
    def num_vars(self):
        return self.psi.shape[0]

    @property
    def num_constraints(self):
        return self.g_rhs.shape[0]

    def objective(self, x):
        return float(0.5 * x @ self.phi @ x + self.psi @ x)

    def slack(self, x):
        """Δ̃ − G̃x, non-negative when feasible"""
        return self.g_rhs - self.g_mat @ x

    def is_feasible(self, x, tol=params.QP_FEASIBILITY_TOL):
        return bool(np.all(self.slack(x) >= -tol * (1 + np.abs(self.g_rhs))))

@dataclass(frozen=True)
class WorkingSet:
    """Ordered constraint indices treated as equalities"""
    active: tuple = ()

    def __post_init__(self):
        active = tuple(int(i) for i in self.active)
        if len(set(active)) != len(active):
            raise ValueError("working set indices must be unique")
        if any(i < 0 for i in active):
            raise ValueError("working set indices must be non-negative")
        object.__setattr__(self, "active", active)

@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    lam: np.ndarray
    final_ws: WorkingSet
    iterations: int

def kkt_solve(phi, g_active, rhs_top, rhs_bot, phi_chol=None):
    """Solve [Φ Gᵀ; G 0][δ; λ] = [−rhs_top; rhs_bot]

    Rank deficient G is reduced by pivoted QR of Gᵀ. Multipliers of rows
    dependent on earlier pivots are returned as zero.
    """
    phi = np.asarray(phi, dtype=float)
    g_active = np.asarray(g_active, dtype=float).reshape(-1, phi.shape[0])
    rhs_top = np.asarray(rhs_top, dtype=float)
    rhs_bot = np.asarray(rhs_bot, dtype=float)
    if phi_chol is None:
        try:
            phi_chol = linalg.cho_factor(phi, lower=True)
        except linalg.LinAlgError as err:
            raise KktSolveError("Φ is not positive definite") from err

    num_active = g_active.shape[0]
    if num_active == 0:
        return -linalg.cho_solve(phi_chol, rhs_top), np.zeros(0)

    q_mat, r_mat, pivots = linalg.qr(g_active.T, pivoting=True)
    diag = np.abs(np.diag(r_mat))
    rank = int(np.sum(diag > params.QP_RANK_TOL * max(1.0, diag[0])))

    if rank == num_active:
        phi_inv_gt = linalg.cho_solve(phi_chol, g_active.T)
        phi_inv_top = linalg.cho_solve(phi_chol, rhs_top)
        schur = g_active @ phi_inv_gt
        try:
            lam = linalg.solve(schur, -(rhs_bot + g_active @ phi_inv_top), assume_a="pos")
        except linalg.LinAlgError as err:
            raise KktSolveError("Schur complement is singular") from err
        return -phi_inv_top - phi_inv_gt @ lam, lam

    q1, q2 = q_mat[:, :rank], q_mat[:, rank:]
    independent = pivots[:rank]
    y_mat = linalg.solve_triangular(r_mat[:rank, :rank], q1.T).T
    if q2.shape[1]:
        reduced = q2.T @ phi @ q2
        l1 = q2 @ linalg.solve(reduced, q2.T, assume_a="pos")
    else:
        l1 = np.zeros_like(phi)
    l2_t = y_mat - l1 @ phi @ y_mat
    l3 = -y_mat.T @ phi @ l2_t

    top = -rhs_top
    bottom = rhs_bot[independent]
    delta = l1 @ top + l2_t @ bottom
    residual = g_active @ delta - rhs_bot
    if np.max(np.abs(residual)) > 1e-8 * (1 + np.max(np.abs(rhs_bot))):
        raise KktSolveError("Right hand side is inconsistent with the dependent constraint rows")
    lam = np.zeros(num_active)
    lam[independent] = l2_t.T @ top + l3 @ bottom
    logging.debug("KKT system solved by QR, rank %d of %d rows", rank, num_active)
    return delta, lam

def step_length(current, direction, prob, inactive):
    """κ = min(1, min over G̃_iδ > 0 of (Δ̃_i − G̃_ix)/(G̃_iδ)), lowest index wins ties"""
    kappa, blocking = 1.0, None
    for index in sorted(inactive):
        row = prob.g_mat[index]
        rate = float(row @ direction)
        if rate <= 0:
            continue
        ratio = max(float(prob.g_rhs[index] - row @ current), 0.0) / rate
        if ratio < kappa:
            kappa, blocking = ratio, index
    return kappa, blocking

def find_feasible_start(prob):
    """Maximise the smallest constraint margin by linear programming"""
    size = prob.num_vars
    if prob.num_constraints == 0:
        return np.zeros(size)
    cost = np.zeros(size + 1)
    cost[-1] = 1.0
    a_ub = np.hstack((prob.g_mat, -np.ones((prob.num_constraints, 1))))
    result = optimize.linprog(
        cost, A_ub=a_ub, b_ub=prob.g_rhs,
        bounds=[(None, None)] * size + [(-1.0, None)], method="highs",
    )
    if result.status != 0:
        raise QpInfeasibleError(f"Phase one linear program failed: {result.message}")
    start = result.x[:size]
    if not prob.is_feasible(start):
        raise QpInfeasibleError(f"QP constraints are infeasible, best margin {-result.x[-1]:.3g}")
    return start

def _most_negative(lam, working):
    """Position in the working set of the most negative multiplier, lowest index on ties"""
    lowest = np.min(lam)
    candidates = [pos for pos, value in enumerate(lam) if value == lowest]
    return min(candidates, key=lambda pos: working[pos])

def solve_qp(prob, start, warm_ws=None, max_iter=None, callback=None):
    """Active set iterations from a feasible start

    ``callback(x, working)`` sees the iterate after every step.
    """
    x = np.asarray(start, dtype=float).copy()
    if x.shape != (prob.num_vars,):
        raise ValueError(f"start has shape {x.shape}, expected ({prob.num_vars},)")
    if not prob.is_feasible(x):
        raise QpInfeasibleError("Start point violates the QP constraints")
    try:
        chol = linalg.cho_factor(prob.phi, lower=True)
    except linalg.LinAlgError as err:
        raise KktSolveError("Φ is not positive definite") from err

    working = []
    if warm_ws is not None:
        slack = prob.slack(x)
        tol = params.QP_FEASIBILITY_TOL * (1 + np.abs(prob.g_rhs))
        working = [i for i in warm_ws.active if i < prob.num_constraints and abs(slack[i]) <= tol[i]]

    limit = max_iter or params.QP_ITERATION_FACTOR * (prob.num_vars + prob.num_constraints)
    zero_step = 1e-12
    iterations = 0
    lam_w = np.zeros(0)
    while True:
        if iterations >= limit:
            raise QpIterationLimitError(f"Active set method exceeded {limit} iterations")
        iterations += 1

        grad = prob.phi @ x + prob.psi
        delta, lam_w = kkt_solve(
            prob.phi, prob.g_mat[working], grad, np.zeros(len(working)), phi_chol=chol
        )
        if np.linalg.norm(delta) <= zero_step * (1 + np.linalg.norm(x)):
            if not working or np.min(lam_w) >= -params.QP_MULTIPLIER_TOL:
                break
            released = _most_negative(lam_w, working)
            working.pop(released)
            continue

        inactive = set(range(prob.num_constraints)) - set(working)
        kappa, blocking = step_length(x, delta, prob, inactive)
        if kappa == 0:
            logging.debug("Degenerate active set step at iteration %d", iterations)
        x = x + kappa * delta
        if blocking is not None:
            working.append(blocking)
        if callback is not None:
            callback(x.copy(), tuple(working))

    lam = np.zeros(prob.num_constraints)
    lam[working] = lam_w
    return QpSolution(x, lam, WorkingSet(tuple(working)), iterations)

def dump_debug(prob, path, solution=None):
    """Write (Φ, ψ, G̃, Δ̃, solution) as JSON for failure triage"""
    document = {
        "phi": prob.phi.tolist(),
        "psi": prob.psi.tolist(),
        "g_mat": prob.g_mat.tolist(),
        "g_rhs": prob.g_rhs.tolist(),
        "solution": None if solution is None else {
            "x": solution.x.tolist(),
            "lambda": solution.lam.tolist(),
            "working_set": list(solution.final_ws.active),
            "iterations": solution.iterations,
        },
    }
    with open(path, "w", encoding="utf-8") as file:
        json.dump(document, file, sort_keys=True, indent=1)
    logging.info("Wrote QP debug dump to '%s'", path)
