"""Excitation policies, training data collection and the dataset CSV"""

import logging
import math
from enum import Enum

import numpy as np
import pandas as pd

from .. import params
from ..errors import ConfigError
from ..gp.model import GpDataset

class ExcitationPolicy(Enum):
    UNIFORM = "uniform"
    PRBS = "prbs"
    SCRIPTED = "scripted"

MULTISINE_PERIODS = (7.0, 17.0, 41.0)

def excitation_controls(policy, steps, bounds, rng, hold=5):
    """(steps, m) controls inside bounds"""
    lower, upper = (np.asarray(bound, dtype=float) for bound in bounds)
    policy = ExcitationPolicy(policy)
    if policy is ExcitationPolicy.UNIFORM:
        return rng.uniform(lower, upper, size=(steps, lower.shape[0]))
    if policy is ExcitationPolicy.PRBS:
        if hold < 1:
            raise ValueError("hold must be at least 1")
        bits = rng.integers(0, 2, size=(math.ceil(steps / hold), lower.shape[0]))
        return np.where(np.repeat(bits, hold, axis=0)[:steps] == 1, upper, lower)

    # Deterministic multisine, one phase offset per channel
    time = np.arange(steps)[:, None]
    channels = np.arange(lower.shape[0])[None, :]
    wave = sum(np.sin(2.0 * np.pi * time / period + channels * (index + 1))
               for index, period in enumerate(MULTISINE_PERIODS))
    return 0.5 * (lower + upper) + 0.5 * (upper - lower) * wave / len(MULTISINE_PERIODS)

def collect_training_data(plant, policy, steps, bounds, seed, hold=5):
    """Roll the plant from reset, inputs (x_k, u_k), targets x_{k+1} − x_k"""
    if steps < 2:
        raise ValueError("at least two samples are needed")
    rng = np.random.default_rng(seed)
    controls = excitation_controls(policy, steps, bounds, rng, hold)
    states = [plant.reset()]
    for control in controls:
        state, _ = plant.step(control, rng)
        states.append(state)
    states = np.array(states)
    logging.info("Collected %d samples with the %s policy", steps, ExcitationPolicy(policy).value)
    return GpDataset(np.hstack((states[:-1], controls)), np.diff(states, axis=0))

def _columns(prefix, count):
    return [f"{prefix}{index + 1}" for index in range(count)]

def write_dataset(dataset, path):
    """Columns x1..xn, u1..um, dx1..dxn"""
    n = dataset.output_dim
    m = dataset.input_dim - n
    frame = pd.DataFrame(
        np.hstack((dataset.inputs, dataset.targets)),
        columns=_columns("x", n) + _columns("u", m) + _columns("dx", n),
    )
    frame.to_csv(path, index=False, float_format=params.CSV_FLOAT_FORMAT)
    logging.info("Wrote %d samples to '%s'", dataset.size, path)

def read_dataset(path):
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError as err:
        raise ConfigError("dataset_path", f"'{path}' does not exist") from err
    n = sum(1 for name in frame.columns if name.startswith("dx"))
    m = sum(1 for name in frame.columns if name.startswith("u"))
    expected = _columns("x", n) + _columns("u", m) + _columns("dx", n)
    if n == 0 or list(frame.columns) != expected:
        raise ConfigError("dataset_path", f"'{path}' needs columns {', '.join(expected) or 'x1.., u1.., dx1..'}")
    values = frame.to_numpy(dtype=float)
    return GpDataset(values[:, :n + m], values[:, n + m:])
