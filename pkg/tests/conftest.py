"""Shared models and problems"""

import numpy as np
import pytest

from gpmpcbench import validate
from gpmpcbench.bench.data import collect_training_data
from gpmpcbench.bench.plant import BenchmarkPlant
from gpmpcbench.gp.model import GpDataset, GpHyperparams, GpModel, TrainingSettings, train

def grid_inputs(points=5):
    grid = np.linspace(-1.0, 1.0, points)
    states, controls = np.meshgrid(grid, grid, indexing="ij")
    return np.column_stack((states.ravel(), controls.ravel()))

@pytest.fixture(scope="session")
def toy_model():
    """Two states, one control, fixed hyperparameters"""
    return validate.toy_model(0)

@pytest.fixture(scope="session")
def control_model():
    """One state, one control, Δx = 0.5·u on a symmetric grid"""
    inputs = grid_inputs()
    return GpModel.from_hyperparams(
        GpDataset(inputs, 0.5 * inputs[:, 1:2]), [GpHyperparams(1.0, 1e-4, np.array([0.5, 2.0]))]
    )

@pytest.fixture(scope="session")
def still_model():
    """Two states that never move, control ignored by the kernel"""
    rng = np.random.default_rng(3)
    inputs = rng.uniform(-1.0, 1.0, size=(20, 3))
    hp = GpHyperparams(1e-4, 1e-6, np.array([1.0, 1.0, 1e-12]))
    return GpModel.from_hyperparams(GpDataset(inputs, np.zeros((20, 2))), [hp, hp])

@pytest.fixture(scope="session")
def plant_model():
    """GP trained to convergence on noise-free states of the benchmark plant"""
    dataset = collect_training_data(BenchmarkPlant(), "uniform", 189, ([0.0, 0.0], [0.8, 0.8]), seed=11)
    return train(dataset, TrainingSettings(restarts=2, seed=11))

@pytest.fixture
def rng():
    return np.random.default_rng(1234)
