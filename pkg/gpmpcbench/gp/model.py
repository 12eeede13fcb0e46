"""Squared-exponential GP regression over state-control inputs"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, optimize

from .. import params
from ..errors import GramFactorizationError, TrainingError

@dataclass(frozen=True)
class GpHyperparams:
    """Signal variance, noise variance and the diagonal of the precision matrix Λ"""
    signal_variance: float
    noise_variance: float
    scales: np.ndarray

    def __post_init__(self):
        scales = np.asarray(self.scales, dtype=float)
        if scales.ndim != 1:
            raise ValueError("scales must be the diagonal of Λ")
        if not (self.signal_variance > 0 and self.noise_variance > 0 and np.all(scales > 0)):
            raise ValueError("hyperparameters must be strictly positive")
        if not np.all(np.isfinite(scales)) or not math.isfinite(self.signal_variance) or not math.isfinite(self.noise_variance):
            raise ValueError("hyperparameters must be finite")
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    @property
    def scale_matrix(self):
        """Λ as a dense matrix"""
        return np.diag(self.scales)

    def to_log(self):
        """Flatten to (log σs², log σn², log Λ_ii)"""
        return np.concatenate(([math.log(self.signal_variance), math.log(self.noise_variance)], np.log(self.scales)))

    @classmethod
    def from_log(cls, theta):
        theta = np.asarray(theta, dtype=float)
        return cls(math.exp(theta[0]), math.exp(theta[1]), np.exp(theta[2:]))

@dataclass(frozen=True)
class GpDataset:
    """Inputs x̃ = (x, u) and state difference targets"""
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        targets = np.asarray(self.targets, dtype=float)
        if targets.ndim == 1:
            targets = targets[:, None]
        if inputs.shape[0] != targets.shape[0]:
            raise ValueError(f"inputs have {inputs.shape[0]} rows but targets have {targets.shape[0]}")
        if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(targets))):
            raise ValueError("dataset entries must be finite")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    @property
    def size(self):
        return self.inputs.shape[0]

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    @property
    def output_dim(self):
        return self.targets.shape[1]

    def subset(self, fraction):
        """First ⌈fraction·D⌉ rows"""
        if not 0 < fraction <= 1:
            raise ValueError("fraction must be in (0, 1]")
        count = max(1, math.ceil(fraction * self.size))
        return GpDataset(self.inputs[:count], self.targets[:count])

@dataclass(frozen=True)
class GpOutput:
    """One output dimension with its cached Gram factorization"""
    hyperparams: GpHyperparams
    gram_chol: np.ndarray
    alpha: np.ndarray
    gram_inv: np.ndarray
    jitter: float = 0.0

@dataclass(frozen=True)
class GpModel:
    """Independent GPs, one per state dimension, sharing the training inputs"""
    dataset: GpDataset
    outputs: tuple
    log_likelihoods: Optional[tuple] = field(default=None, compare=False)

    @classmethod
    def from_hyperparams(cls, dataset, hyperparams, log_likelihoods=None):
        """Factorize every Gram matrix and cache K_σ⁻¹y"""
        if len(hyperparams) != dataset.output_dim:
            raise ValueError(f"Expected {dataset.output_dim} hyperparameter sets, got {len(hyperparams)}")
        outputs = []
        for dim, hp in enumerate(hyperparams):
            if hp.scales.shape[0] != dataset.input_dim:
                raise ValueError(f"Output {dim} has {hp.scales.shape[0]} scales for {dataset.input_dim} inputs")
            chol, jitter = cholesky_with_jitter(gram_matrix(dataset, hp))
            alpha = linalg.cho_solve((chol, True), dataset.targets[:, dim])
            gram_inv = linalg.cho_solve((chol, True), np.eye(dataset.size))
            outputs.append(GpOutput(hp, chol, alpha, 0.5 * (gram_inv + gram_inv.T), jitter))
        return cls(dataset, tuple(outputs), None if log_likelihoods is None else tuple(log_likelihoods))

    @property
    def state_dim(self):
        return self.dataset.output_dim

    @property
    def input_dim(self):
        return self.dataset.input_dim

    @property
    def control_dim(self):
        return self.input_dim - self.state_dim

    @property
    def hyperparams(self):
        return tuple(out.hyperparams for out in self.outputs)

def _check_dim(vector, dim, name):
    vector = np.asarray(vector, dtype=float)
    if vector.shape[-1] != dim:
        raise ValueError(f"{name} has dimension {vector.shape[-1]}, expected {dim}")
    return vector

def kernel_matrix(left, right, hp):
    """Cross covariance σs²·exp(−½ dᵀΛd) between two row sets, noise free"""
    scaled_left = left * np.sqrt(hp.scales)
    scaled_right = right * np.sqrt(hp.scales)
    sq_dist = (
        np.sum(scaled_left**2, axis=1)[:, None]
        + np.sum(scaled_right**2, axis=1)[None, :]
        - 2.0 * scaled_left @ scaled_right.T
    )
    return hp.signal_variance * np.exp(-0.5 * np.maximum(sq_dist, 0.0))

def se_kernel(a, b, hp):
    """Noise free squared exponential covariance of two inputs"""
    a = _check_dim(a, hp.scales.shape[0], "a")
    b = _check_dim(b, hp.scales.shape[0], "b")
    diff = a - b
    return hp.signal_variance * math.exp(-0.5 * float(diff @ (hp.scales * diff)))

def gram_matrix(dataset, hp):
    """K_σ = K(X̃, X̃) + σn²·I, symmetric by construction"""
    if dataset.size < 1:
        raise ValueError("dataset is empty")
    _check_dim(dataset.inputs, hp.scales.shape[0], "inputs")
    gram = kernel_matrix(dataset.inputs, dataset.inputs, hp)
    gram = 0.5 * (gram + gram.T)
    gram[np.diag_indices_from(gram)] = hp.signal_variance + hp.noise_variance
    return gram

def cholesky_with_jitter(matrix):
    """Lower Cholesky factor, escalating diagonal jitter on failure

    Returns (factor, jitter added)
    """
    try:
        return linalg.cholesky(matrix, lower=True), 0.0
    except linalg.LinAlgError:
        pass

    mean_diag = float(np.mean(np.diag(matrix)))
    relative = params.JITTER_START
    while relative <= params.JITTER_MAX * (1 + 1e-9):
        jitter = relative * mean_diag
        try:
            factor = linalg.cholesky(matrix + jitter * np.eye(matrix.shape[0]), lower=True)
        except linalg.LinAlgError:
            relative *= params.JITTER_GROWTH
            continue
        logging.debug("Gram factorization needed jitter %.3g", jitter)
        return factor, jitter
    raise GramFactorizationError("Gram matrix is not positive definite even with maximum jitter")

def log_marginal_likelihood(dataset, hp, dim):
    """−½ yᵀK_σ⁻¹y − ½ log|K_σ| − (D/2)·log 2π"""
    chol, _ = cholesky_with_jitter(gram_matrix(dataset, hp))
    return _lml_from_chol(chol, dataset.targets[:, dim])

def _lml_from_chol(chol, y):
    alpha = linalg.cho_solve((chol, True), y)
    return float(
        -0.5 * y @ alpha
        - np.sum(np.log(np.diag(chol)))
        - 0.5 * y.shape[0] * math.log(2 * math.pi)
    )

def log_marginal_likelihood_gradient(dataset, hp, dim):
    """Likelihood and its gradient in (log σs², log σn², log Λ_ii)

    ∂L/∂θ = ½ tr((ααᵀ − K_σ⁻¹) ∂K_σ/∂θ)
    """
    y = dataset.targets[:, dim]
    kernel = kernel_matrix(dataset.inputs, dataset.inputs, hp)
    kernel = 0.5 * (kernel + kernel.T)
    kernel[np.diag_indices_from(kernel)] = hp.signal_variance
    gram = kernel + hp.noise_variance * np.eye(dataset.size)
    chol, _ = cholesky_with_jitter(gram)
    alpha = linalg.cho_solve((chol, True), y)
    gram_inv = linalg.cho_solve((chol, True), np.eye(dataset.size))
    inner = np.outer(alpha, alpha) - gram_inv

    grad = np.empty(2 + hp.scales.shape[0])
    grad[0] = 0.5 * np.sum(inner * kernel)
    grad[1] = 0.5 * hp.noise_variance * np.trace(inner)
    for d, scale in enumerate(hp.scales):
        diff = dataset.inputs[:, d][:, None] - dataset.inputs[:, d][None, :]
        grad[2 + d] = 0.5 * np.sum(inner * kernel * (-0.5 * scale * diff**2))
    return _lml_from_chol(chol, y), grad

@dataclass(frozen=True)
class TrainingSettings:
    """Multi-start L-BFGS-B settings"""
    restarts: int = params.TRAINING_RESTARTS
    max_iter: int = params.TRAINING_MAX_ITER
    tolerance: float = params.TRAINING_TOLERANCE
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")

def _log_bounds(dataset, dim):
    target_var = max(float(np.var(dataset.targets[:, dim])), 1e-12)
    input_var = np.maximum(np.var(dataset.inputs, axis=0), 1e-12)
    log_target = math.log(target_var)
    bounds = [
        (log_target - params.LOG_SIGNAL_SPAN, log_target + params.LOG_SIGNAL_SPAN),
        (log_target - 2.0 * math.log(params.NOISE_SNR_FLOOR), log_target + params.LOG_NOISE_MAX),
    ]
    for var in input_var:
        centre = -math.log(var)
        bounds.append((centre - params.LOG_SCALE_SPAN, centre + params.LOG_SCALE_SPAN))
    return bounds

def snr_penalty(theta):
    """Barrier ((log σs − log σn) / log SNR_max)^p on log parameters, with its gradient"""
    scale = 2.0 * math.log(params.NOISE_SNR_MAX)
    ratio = (theta[0] - theta[1]) / scale
    power = params.NOISE_SNR_PENALTY_POWER
    grad = np.zeros_like(theta)
    grad[0] = power * ratio ** (power - 1) / scale
    grad[1] = -grad[0]
    return ratio ** power, grad

def initial_hyperparams(dataset, dim):
    """Signal variance from targets, 1% noise, Λ_ii = 1/input variance"""
    target_var = max(float(np.var(dataset.targets[:, dim])), 1e-12)
    input_var = np.maximum(np.var(dataset.inputs, axis=0), 1e-12)
    return GpHyperparams(target_var, 1e-2 * target_var, 1.0 / input_var)

def _train_dimension(dataset, dim, settings):
    bounds = _log_bounds(dataset, dim)
    lower = np.array([b[0] for b in bounds])
    upper = np.array([b[1] for b in bounds])
    rng = params.derive_rng(settings.seed, params.SEED_KEY_TRAINING, dim)

    starts = [np.clip(initial_hyperparams(dataset, dim).to_log(), lower, upper)]
    for _ in range(settings.restarts - 1):
        starts.append(np.clip(starts[0] + rng.normal(0.0, 1.0, size=lower.shape), lower, upper))

    def negative(theta):
        lml, grad = log_marginal_likelihood_gradient(dataset, GpHyperparams.from_log(theta), dim)
        penalty, penalty_grad = snr_penalty(theta)
        return penalty - lml, penalty_grad - grad

    best_theta, best_objective, best_lml = None, -math.inf, -math.inf
    for restart, theta0 in enumerate(starts):
        try:
            start_objective = -negative(theta0)[0]
            result = optimize.minimize(
                negative, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                options={"maxiter": settings.max_iter, "ftol": settings.tolerance},
            )
            theta, objective = result.x, -float(result.fun)
            if not objective >= start_objective:
                theta, objective = theta0, start_objective
            lml = log_marginal_likelihood(dataset, GpHyperparams.from_log(theta), dim)
        except GramFactorizationError as err:
            logging.warning("Training restart %d of output %d failed: %s", restart, dim, err)
            continue
        logging.debug("Output %d restart %d reached log likelihood %.6f", dim, restart, lml)
        if objective > best_objective:
            best_theta, best_objective, best_lml = theta, objective, lml

    if best_theta is None:
        raise TrainingError(f"All {settings.restarts} restarts failed for output {dim}")
    logging.info("Output %d trained, log likelihood %.6f", dim, best_lml)
    return GpHyperparams.from_log(best_theta), best_lml

def train(dataset, settings=None):
    """Maximise the marginal likelihood of each output dimension"""
    settings = settings or TrainingSettings()
    if dataset.size < 2:
        raise ValueError("training needs at least two samples")

    dims = range(dataset.output_dim)
    if settings.jobs > 1:
        with ThreadPoolExecutor(max_workers=settings.jobs) as pool:
            results = list(pool.map(lambda d: _train_dimension(dataset, d, settings), dims))
    else:
        results = [_train_dimension(dataset, d, settings) for d in dims]

    return GpModel.from_hyperparams(
        dataset, [hp for hp, _ in results], log_likelihoods=[lml for _, lml in results]
    )

def predict_many(model, inputs):
    """Predictive mean and latent variance for a batch of rows"""
    inputs = np.atleast_2d(_check_dim(inputs, model.input_dim, "input"))
    means = np.empty((inputs.shape[0], model.state_dim))
    variances = np.empty_like(means)
    for dim, out in enumerate(model.outputs):
        cross = kernel_matrix(inputs, model.dataset.inputs, out.hyperparams)
        means[:, dim] = cross @ out.alpha
        solved = linalg.solve_triangular(out.gram_chol, cross.T, lower=True)
        variances[:, dim] = out.hyperparams.signal_variance - np.sum(solved**2, axis=0)
    return means, np.maximum(variances, 0.0)

def predict_deterministic(model, x_input):
    """(delta_mean, delta_var) at a deterministic state-control tuple"""
    x_input = _check_dim(x_input, model.input_dim, "input")
    if x_input.ndim != 1:
        raise ValueError("predict_deterministic takes a single input, use predict_many")
    means, variances = predict_many(model, x_input)
    return means[0], variances[0]

def training_mse(model):
    """Per-output mean squared error of the predictive mean on the training inputs"""
    means, _ = predict_many(model, model.dataset.inputs)
    return np.mean((means - model.dataset.targets)**2, axis=0)
