"""Receding horizon closed loop, trajectory log and Lyapunov diagnostic"""

import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import pandas as pd

from .. import params
from ..errors import ControllerError, GpmpcError
from ..gp.propagation import GaussianState, one_step_posterior
from .cost import stage_cost

class PlantHandle(Protocol):
    """What the loop needs from a simulated plant"""
    output_indices: tuple

    def reset(self) -> np.ndarray:
        ...

    def step(self, control, rng) -> tuple:
        ...

@dataclass(frozen=True)
class StepRecord:
    """Closed loop step k: u_k applied, x_{k+1} and y_{k+1} observed"""
    k: int
    reference: np.ndarray
    control: np.ndarray
    state: np.ndarray
    output: np.ndarray
    pred_mean: np.ndarray
    pred_var: np.ndarray
    cost: float
    lyapunov: float
    terminal_cost: float
    solver_iters: int
    solve_ms: float
    planned_controls: np.ndarray

@dataclass
class TrajectoryLog:
    output_indices: tuple
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(rec, name) for rec in self.records])

    def tracking_errors(self):
        """y_{k+1} − r_{k+1} on the measured outputs, one row per step"""
        return self.column("output") - self.column("reference")[:, list(self.output_indices)]

    def to_frame(self):
        """Table with columns k, r_*, u_*, x_*, y_*, pred_mu_*, pred_var_*, cost, lyapunov, solver_iters, solve_ms"""
        columns = {"k": self.column("k")}
        for prefix, name in (
            ("r", "reference"), ("u", "control"), ("x", "state"), ("y", "output"),
            ("pred_mu", "pred_mean"), ("pred_var", "pred_var"),
        ):
            values = self.column(name)
            for index in range(values.shape[1] if values.ndim == 2 else 0):
                columns[f"{prefix}_{index + 1}"] = values[:, index]
        for name in ("cost", "lyapunov", "solver_iters", "solve_ms"):
            columns[name] = self.column(name)
        return pd.DataFrame(columns)

    def write_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format=params.CSV_FLOAT_FORMAT)

def run_receding_horizon(controller, plant, ref, steps, cfg, seed, record_timing=True):
    """Measure, plan, apply the first control, log

    The covariance handed to the controller is the GP one-step posterior
    at (x_k, u_{k-1}); the measured state is treated as exact.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if len(ref) < steps + cfg.horizon + 1:
        raise ValueError(f"reference needs at least {steps + cfg.horizon + 1} points, got {len(ref)}")

    rng = np.random.default_rng(seed)
    controller.reset()
    state = plant.reset()
    u_prev = np.zeros(cfg.control_dim)
    log = TrajectoryLog(tuple(plant.output_indices))

    for k in range(steps):
        try:
            belief = GaussianState(state, one_step_posterior(controller.model, state, u_prev).cov)
            decision = controller.step(belief, u_prev, ref.window(k + 1, cfg.horizon))
        except GpmpcError as err:
            logging.warning("Controller failed at step %d: %s", k, err)
            raise ControllerError(k, err, log) from err

        control = decision.control
        if np.any(control < cfg.u_min) or np.any(control > cfg.u_max):
            raise ControllerError(k, f"control {control} outside bounds", log)

        state, output = plant.step(control, rng)
        target = ref.points[k + 1]
        log.records.append(StepRecord(
            k=k,
            reference=target,
            control=control,
            state=state,
            output=output,
            pred_mean=decision.predicted_means[0],
            pred_var=decision.predicted_vars[0],
            cost=stage_cost(state, np.zeros((cfg.state_dim, cfg.state_dim)), control, target, cfg),
            lyapunov=decision.objective,
            terminal_cost=decision.terminal_cost,
            solver_iters=decision.iterations,
            solve_ms=decision.solve_ms if record_timing else 0.0,
            planned_controls=decision.planned_controls,
        ))
        u_prev = control
    return log

@dataclass(frozen=True)
class LyapunovReport:
    values: np.ndarray
    allowances: np.ndarray
    flags: np.ndarray

    @property
    def violations(self):
        return np.flatnonzero(self.flags)

def lyapunov_diagnostic(log, cfg, tol=params.LYAPUNOV_TOL):
    """Flag steps where V*(k+1) > V*(k) + terminal stage allowance of plan k+1"""
    values = log.column("lyapunov").astype(float)
    allowances = log.column("terminal_cost").astype(float)
    flags = np.zeros(values.shape[0], dtype=bool)
    if values.shape[0] > 1:
        flags[1:] = values[1:] > values[:-1] + allowances[1:] + tol
    for k in np.flatnonzero(flags):
        logging.info("Lyapunov value rose at step %d (horizon %d): %.6g after %.6g", k, cfg.horizon, values[k], values[k - 1])
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        logging.warning("Lyapunov values are not all finite and non-negative")
    return LyapunovReport(values, allowances, flags)
