"""Controller configuration, reference trajectories and step results"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .. import params

class TighteningMode(Enum):
    """How chance constraints shrink the mean bounds"""
    PAPER_2SIGMA_VARIANCE = "paper-2sigma-variance"
    TWO_STD = "two-std"

class VarianceWeight(Enum):
    """Weight on the √Σ block of the extended state"""
    TRACE = "trace" # Q⊗I, equals trace(Q·Σ)
    DIAGONAL = "diagonal" # diag(vec Q)

def _is_pd(matrix):
    return np.allclose(matrix, matrix.T) and np.linalg.eigvalsh(0.5 * (matrix + matrix.T))[0] > 0

@dataclass(frozen=True)
class MpcConfig:
    horizon: int
    q_mat: np.ndarray
    r_mat: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    x_min: np.ndarray
    x_max: np.ndarray
    confidence: float = params.CONFIDENCE
    tightening_mode: TighteningMode = TighteningMode.PAPER_2SIGMA_VARIANCE
    variance_weight: VarianceWeight = VarianceWeight.TRACE

    def __post_init__(self):
        if not isinstance(self.horizon, int) or self.horizon < 1:
            raise ValueError("horizon must be a positive integer")
        q_mat = np.atleast_2d(np.asarray(self.q_mat, dtype=float))
        r_mat = np.atleast_2d(np.asarray(self.r_mat, dtype=float))
        if not _is_pd(q_mat):
            raise ValueError("q_mat must be symmetric positive definite")
        if not _is_pd(r_mat):
            raise ValueError("r_mat must be symmetric positive definite")
        n, m = q_mat.shape[0], r_mat.shape[0]

        vectors = {}
        for name, size in (("u_min", m), ("u_max", m), ("x_min", n), ("x_max", n)):
            value = getattr(self, name)
            default = -np.inf if name.endswith("min") else np.inf
            value = np.full(size, default) if value is None else np.asarray(value, dtype=float).reshape(-1)
            if value.shape != (size,):
                raise ValueError(f"{name} must have {size} entries")
            vectors[name] = value
        # Equal control bounds pin the input
        if np.any(vectors["u_min"] > vectors["u_max"]) or not np.all(np.isfinite(vectors["u_min"])) \
                or not np.all(np.isfinite(vectors["u_max"])):
            raise ValueError("control bounds must be finite with u_min ≤ u_max")
        if np.any(vectors["x_min"] >= vectors["x_max"]):
            raise ValueError("state bounds must satisfy x_min < x_max")
        if self.confidence != params.CONFIDENCE:
            raise ValueError(f"only confidence {params.CONFIDENCE} is supported")

        object.__setattr__(self, "q_mat", q_mat)
        object.__setattr__(self, "r_mat", r_mat)
        for name, value in vectors.items():
            object.__setattr__(self, name, value)
        object.__setattr__(self, "tightening_mode", TighteningMode(self.tightening_mode))
        object.__setattr__(self, "variance_weight", VarianceWeight(self.variance_weight))

    @property
    def state_dim(self):
        return self.q_mat.shape[0]

    @property
    def control_dim(self):
        return self.r_mat.shape[0]

    def clamp_control(self, control):
        return np.clip(control, self.u_min, self.u_max)

    def applied_control(self, control):
        """Clamped control, warning when the solver result was outside the bounds"""
        clamped = self.clamp_control(control)
        moved = float(np.max(np.abs(clamped - control), initial=0.0))
        if moved > params.CONTROL_CLAMP_TOL:
            logging.warning("Clamped the solver control by %.3g onto its bounds", moved)
        return clamped

@dataclass(frozen=True)
class ReferenceTrajectory:
    """One target state per time step, unused entries weighted out by Q"""
    points: np.ndarray

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if not np.all(np.isfinite(points)):
            raise ValueError("reference must be finite")
        object.__setattr__(self, "points", points)

    def __len__(self):
        return self.points.shape[0]

    def window(self, start, length):
        """points[start:start + length], which must exist"""
        if start + length > len(self):
            raise ValueError(f"reference of length {len(self)} ends before step {start + length}")
        return self.points[start:start + length]

@dataclass(frozen=True)
class ControlDecision:
    """One controller step: the applied control and the plan behind it"""
    control: np.ndarray
    planned_controls: np.ndarray
    predicted_means: np.ndarray
    predicted_vars: np.ndarray
    objective: float
    terminal_cost: float
    iterations: int
    solve_ms: float
