"""Time-varying MIMO benchmark plant and its task table"""

import math
from dataclasses import dataclass

import numpy as np

from .. import params

NOISE_STD = 0.1 # output noise variance 0.01

def a_coef(k):
    return 10.0 + 0.5 * math.sin(k)

def b_coef(k):
    return 10.0 / (1.0 + math.exp(-0.05 * k))

@dataclass(frozen=True)
class PlantState:
    x: np.ndarray
    k: int = 0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        if x.shape != (params.STATE_DIM,):
            raise ValueError(f"plant state has {params.STATE_DIM} entries, got {x.shape[0]}")
        if not np.all(np.isfinite(x)):
            raise ValueError("plant state must be finite")
        object.__setattr__(self, "x", x)

def plant_step(state, u, noise=None, rng=None):
    """Advance one step, returns (next state, noisy y = (x₁, x₃))

    ``noise`` overrides the output noise; without it and without ``rng`` the
    outputs are noise-free.
    """
    x1, x2, x3, x4 = state.x
    u1, u2 = np.asarray(u, dtype=float).reshape(params.CONTROL_DIM)
    x_next = np.array([
        x1 ** 2 / (1.0 + x1 ** 2) + 0.3 * x2,
        x1 ** 2 / (1.0 + x2 ** 2 + x3 ** 2 + x4 ** 2) + a_coef(state.k) * u1,
        x3 ** 2 / (1.0 + x3 ** 2) + 0.2 * x4,
        x3 ** 2 / (1.0 + x1 ** 2 + x2 ** 2 + x4 ** 2) + b_coef(state.k) * u2,
    ])
    if noise is None:
        noise = np.zeros(2) if rng is None else rng.normal(0.0, NOISE_STD, size=2)
    output = x_next[list(params.OUTPUT_INDICES)] + np.asarray(noise, dtype=float)
    return PlantState(x_next, state.k + 1), output

class BenchmarkPlant:
    """Plant handle for the closed loop, starting from x₀ = 0"""
    output_indices = params.OUTPUT_INDICES

    def __init__(self, initial=None):
        self._initial = np.zeros(params.STATE_DIM) if initial is None else np.asarray(initial, dtype=float)
        self._state = PlantState(self._initial)

    @property
    def state(self):
        return self._state

    def reset(self):
        self._state = PlantState(self._initial)
        return self._state.x.copy()

    def step(self, control, rng):
        self._state, output = plant_step(self._state, control, rng=rng)
        return self._state.x.copy(), output

@dataclass(frozen=True)
class TaskSpec:
    name: str
    u_min: tuple
    u_max: tuple
    r_diag: tuple = (1.0, 1.0)
    q_diag: tuple = (1.0, 1.0, 1.0, 1.0)

TASKS = {
    "step": TaskSpec("step", (0.0, 0.0), (5.0, 5.0)),
    "lorenz": TaskSpec("lorenz", (-4.0, -7.0), (4.0, 7.0)),
}

def _steady_partner(level, gain):
    return (level - level ** 2 / (1.0 + level ** 2)) / gain

def complete_reference(outputs):
    """Full state targets from (y₁, y₂) targets

    x₂ and x₄ take the values that hold x₁ and x₃ at their targets.
    """
    outputs = np.atleast_2d(np.asarray(outputs, dtype=float))
    r1, r2 = outputs[:, 0], outputs[:, 1]
    return np.column_stack((r1, _steady_partner(r1, 0.3), r2, _steady_partner(r2, 0.2)))
