"""GPMPC2: extended local model, condensed QP, warm started active set"""

import logging
import time

import numpy as np

from .condense import build_condensed_qp
from .config import ControlDecision
from .cost import expected_cost, stage_cost
from ..gp.linearization import ExtendedState, linearize_extended
from ..solvers.active_set import find_feasible_start, solve_qp

def gpmpc2_step(model, state, u_prev, ref, cfg, warm=None, prev_ext=None, warm_du=None):
    """Returns (u_k, ControlDecision, final working set)

    ``prev_ext`` is the previous extended state, giving Δs_k = s_k − s_{k-1};
    without it Δs_k = 0.
    """
    started = time.perf_counter()
    u_prev = np.asarray(u_prev, dtype=float)
    ext = ExtendedState.from_gaussian(state)
    ds_k = np.zeros_like(ext.vec) if prev_ext is None else ext.vec - prev_ext

    local = linearize_extended(model, ext, u_prev)
    cqp = build_condensed_qp(local, ext, ds_k, u_prev, ref, cfg)
    prob = cqp.qp_problem()

    if warm_du is not None and warm_du.shape == prob.psi.shape and prob.is_feasible(warm_du):
        start = warm_du
    elif prob.is_feasible(np.zeros(prob.num_vars)):
        start = np.zeros(prob.num_vars)
    else:
        logging.debug("GPMPC2 warm start infeasible, running phase one")
        start = find_feasible_start(prob)

    solution = solve_qp(prob, start, warm)
    delta_u = solution.x
    u_k = cfg.applied_control(u_prev + delta_u[:cfg.control_dim])

    means, covs, controls = cqp.predicted_moments(delta_u)
    decision = ControlDecision(
        control=u_k,
        planned_controls=controls,
        predicted_means=means,
        predicted_vars=np.diagonal(covs, axis1=1, axis2=2).copy(),
        objective=expected_cost(means, covs, controls, cqp.ref, cfg),
        terminal_cost=stage_cost(means[-1], covs[-1], controls[-1], cqp.ref[-1], cfg),
        iterations=solution.iterations,
        solve_ms=1e3 * (time.perf_counter() - started),
    )
    return u_k, decision, solution.final_ws

class Gpmpc2Controller:
    """Carries s_{k-1}, ΔU* and the working set between steps"""
    name = "gpmpc2"

    def __init__(self, model, cfg):
        self._model = model
        self._cfg = cfg
        self.reset()

    @property
    def model(self):
        return self._model

    @property
    def cfg(self):
        return self._cfg

    def reset(self):
        self._prev_ext = None
        self._warm_ws = None
        self._warm_du = None

    def step(self, state, u_prev, ref):
        _, decision, self._warm_ws = gpmpc2_step(
            self._model, state, u_prev, ref, self._cfg,
            warm=self._warm_ws, prev_ext=self._prev_ext, warm_du=self._warm_du,
        )
        # U = 1⊗u_{k-1} + T_uΔU, so ΔU is the first difference of the plan
        self._warm_du = np.diff(np.vstack((u_prev, decision.planned_controls)), axis=0).ravel()
        self._prev_ext = ExtendedState.from_gaussian(state).vec
        return decision
