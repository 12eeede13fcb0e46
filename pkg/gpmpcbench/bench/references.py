"""Step and Lorenz reference generators, reference CSV"""

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .. import params
from ..control.config import ReferenceTrajectory
from ..errors import ConfigError

DEFAULT_STEP_LEVELS = ((1.0, 0.5), (2.0, 1.5), (1.5, 1.0))
DEFAULT_STEP_SWITCHES = (1, 63, 126)

def reference_step(steps, levels=DEFAULT_STEP_LEVELS, switch_steps=DEFAULT_STEP_SWITCHES):
    """Piecewise constant outputs, zero before the first switch"""
    if steps < 1:
        raise ValueError("steps must be at least 1")
    levels = np.atleast_2d(np.asarray(levels, dtype=float))
    switch_steps = np.asarray(switch_steps, dtype=int)
    if levels.shape[0] != switch_steps.shape[0]:
        raise ValueError("one level row is needed per switch step")
    if np.any(np.diff(switch_steps) <= 0):
        raise ValueError("switch steps must be increasing")

    plateau = np.searchsorted(switch_steps, np.arange(steps), side="right")
    padded = np.vstack((np.zeros((1, levels.shape[1])), levels))
    return ReferenceTrajectory(padded[plateau])

@dataclass(frozen=True)
class LorenzParams:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    dt: float = 0.01
    stride: int = 5
    initial: tuple = (1.0, 1.0, 1.0)
    bands: tuple = ((-1.0, 1.5), (-1.0, 1.5))

def _lorenz_rate(point, lp):
    x, y, z = point
    return np.array([lp.sigma * (y - x), x * (lp.rho - z) - y, x * y - lp.beta * z])

def _rescale(values, band):
    low, high = band
    span = values.max() - values.min()
    if span == 0.0 or high == low:
        return np.full_like(values, low)
    return low + (values - values.min()) * (high - low) / span

def reference_lorenz(steps, lp=None):
    """x and z of a fixed step RK4 Lorenz integration, rescaled to the output bands"""
    if steps < 1:
        raise ValueError("steps must be at least 1")
    lp = lp or LorenzParams()
    point = np.asarray(lp.initial, dtype=float)
    samples = [point]
    for _ in range((steps - 1) * lp.stride):
        k1 = _lorenz_rate(point, lp)
        k2 = _lorenz_rate(point + 0.5 * lp.dt * k1, lp)
        k3 = _lorenz_rate(point + 0.5 * lp.dt * k2, lp)
        k4 = _lorenz_rate(point + lp.dt * k3, lp)
        point = point + lp.dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        samples.append(point)
    trace = np.array(samples[::lp.stride])
    return ReferenceTrajectory(np.column_stack((
        _rescale(trace[:, 0], lp.bands[0]),
        _rescale(trace[:, 2], lp.bands[1]),
    )))

def write_reference(ref, path):
    """Columns k, r1, r2, ..."""
    frame = pd.DataFrame(ref.points, columns=[f"r{index + 1}" for index in range(ref.points.shape[1])])
    frame.insert(0, "k", np.arange(len(ref)))
    frame.to_csv(path, index=False, float_format=params.CSV_FLOAT_FORMAT)

def read_reference(path):
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError as err:
        raise ConfigError("reference_path", f"'{path}' does not exist") from err
    columns = [name for name in frame.columns if name != "k"]
    if "k" not in frame.columns or not columns or not all(name.startswith("r") for name in columns):
        raise ConfigError("reference_path", f"'{path}' needs columns k, r1, r2")
    return ReferenceTrajectory(frame[columns].to_numpy(dtype=float))
