"""Basic and extended local models of the GP dynamics"""

import math
from dataclasses import dataclass

import numpy as np

from .. import params
from ..errors import GpmpcError, LinearizationError
from .propagation import GaussianState, propagate_state, propagate_state_jacobians

@dataclass(frozen=True)
class BasicLocalModel:
    """μ' ≈ A·μ + B·u around (μ*, u*)"""
    a_mat: np.ndarray
    b_mat: np.ndarray
    op_mean: np.ndarray
    op_control: np.ndarray

    def __post_init__(self):
        if not (np.all(np.isfinite(self.a_mat)) and np.all(np.isfinite(self.b_mat))):
            raise LinearizationError("Local model has non-finite entries")

def state_dim_from_extended(length):
    """n such that n + n² = length"""
    n = int(round((-1 + math.sqrt(1 + 4 * length)) / 2))
    if n + n * n != length:
        raise ValueError(f"{length} is not a valid extended state length")
    return n

def sqrtm_psd(cov):
    """Principal square root of a symmetric PSD matrix"""
    eigvals, eigvecs = np.linalg.eigh(0.5 * (cov + cov.T))
    root = (eigvecs * np.sqrt(np.maximum(eigvals, 0.0))) @ eigvecs.T
    return 0.5 * (root + root.T)

@dataclass(frozen=True)
class ExtendedState:
    """s = [μ; vec(√Σ)], row-major vec keeping all n² entries"""
    vec: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vec, dtype=float).reshape(-1)
        n = state_dim_from_extended(vec.shape[0])
        root = vec[n:].reshape(n, n)
        if not np.allclose(root, root.T, rtol=0.0, atol=1e-8):
            raise ValueError("√Σ block is not symmetric")
        object.__setattr__(self, "vec", vec)

    @classmethod
    def from_gaussian(cls, state):
        return cls(np.concatenate((state.mean, sqrtm_psd(state.cov).ravel())))

    @property
    def state_dim(self):
        return state_dim_from_extended(self.vec.shape[0])

    @property
    def mean(self):
        return self.vec[:self.state_dim]

    @property
    def sqrt_cov(self):
        n = self.state_dim
        return self.vec[n:].reshape(n, n)

    def to_gaussian(self):
        root = self.sqrt_cov
        cov = root @ root.T
        return GaussianState(self.mean, 0.5 * (cov + cov.T))

@dataclass(frozen=True)
class ExtendedLocalModel:
    """s' ≈ A·s + B·u for the extended state"""
    a_mat: np.ndarray
    b_mat: np.ndarray
    op_state: np.ndarray
    op_control: np.ndarray

def finite_diff_jacobian(func, point, step=params.FINITE_DIFF_STEP):
    """Central difference Jacobian, rows are outputs"""
    if not step > 0:
        raise ValueError("step must be positive")
    point = np.asarray(point, dtype=float).reshape(-1)
    columns = []
    for index in range(point.shape[0]):
        offset = np.zeros_like(point)
        offset[index] = step
        upper = np.atleast_1d(np.asarray(func(point + offset), dtype=float)).reshape(-1)
        lower = np.atleast_1d(np.asarray(func(point - offset), dtype=float)).reshape(-1)
        columns.append((upper - lower) / (2 * step))
    return np.column_stack(columns)

def linearize_basic(model, mean, cov, control):
    """Mean-level Jacobians of the moment matched map at (μ*, Σ*, u*)"""
    state = GaussianState(mean, cov)
    control = np.asarray(control, dtype=float).reshape(-1)
    if control.shape[0] != model.control_dim or state.mean.shape[0] != model.state_dim:
        raise ValueError("operating point dimensions do not match the model")
    try:
        _, jac = propagate_state_jacobians(model, state, control)
    except GpmpcError as err:
        raise LinearizationError(f"Propagation failed at the operating point: {err}") from err
    return BasicLocalModel(jac.mean_mean, jac.mean_control, state.mean, control)

def extended_map(model, ext_vec, control):
    """F'(s, u) = [μ'; vec(√Σ')] with Σ = S·Sᵀ for the reshaped √Σ block S"""
    ext_vec = np.asarray(ext_vec, dtype=float)
    n = state_dim_from_extended(ext_vec.shape[0])
    root = ext_vec[n:].reshape(n, n)
    cov = root @ root.T
    nxt = propagate_state(model, GaussianState(ext_vec[:n], 0.5 * (cov + cov.T)), control)
    return np.concatenate((nxt.mean, sqrtm_psd(nxt.cov).ravel()))

def _floored_root_eigvals(eigvals):
    roots = np.sqrt(np.maximum(eigvals, 0.0))
    floored = np.maximum(roots, params.SQRT_EIGEN_FLOOR)
    if np.max(floored - roots) > params.SQRT_EIGEN_FLOOR_CAP:
        raise LinearizationError("√Σ regularization exceeds the cap")
    return floored

def linearize_extended(model, ext_state, control):
    """Full block Jacobians of F' at (s*, u*)"""
    if not isinstance(ext_state, ExtendedState):
        ext_state = ExtendedState(ext_state)
    n = ext_state.state_dim
    control = np.asarray(control, dtype=float).reshape(-1)
    root = ext_state.sqrt_cov

    if np.linalg.eigvalsh(0.5 * (root + root.T))[0] < -params.SQRT_EIGEN_FLOOR_CAP:
        raise LinearizationError("√Σ block has a negative eigenvalue")

    try:
        nxt, jac = propagate_state_jacobians(model, ext_state.to_gaussian(), control)
    except GpmpcError as err:
        raise LinearizationError(f"Propagation failed at the operating point: {err}") from err

    eigvals, eigvecs = np.linalg.eigh(nxt.cov)
    roots = _floored_root_eigvals(eigvals)
    denom = roots[:, None] + roots[None, :]

    def root_differential(d_cov):
        """dS' from dΣ' = dS'·S' + S'·dS', last axis indexes directions"""
        rotated = np.einsum("ki,klz,lj->ijz", eigvecs, d_cov, eigvecs) / denom[:, :, None]
        return np.einsum("ik,klz,jl->ijz", eigvecs, rotated, eigvecs)

    # Σ = S·Sᵀ, so a symmetric gradient G gives ∂/∂S = 2·G·S
    mean_root = 2.0 * np.einsum("akl,lq->akq", jac.mean_cov, root)
    cov_root = 2.0 * np.einsum("ijkl,lq->ijkq", jac.cov_cov, root).reshape(n, n, n * n)

    size = n + n * n
    a_mat = np.zeros((size, size))
    a_mat[:n, :n] = jac.mean_mean
    a_mat[:n, n:] = mean_root.reshape(n, n * n)
    a_mat[n:, :n] = root_differential(jac.cov_mean).reshape(n * n, n)
    a_mat[n:, n:] = root_differential(cov_root).reshape(n * n, n * n)

    b_mat = np.vstack((jac.mean_control, root_differential(jac.cov_control).reshape(n * n, -1)))
    if not (np.all(np.isfinite(a_mat)) and np.all(np.isfinite(b_mat))):
        raise LinearizationError("Extended local model has non-finite entries")
    return ExtendedLocalModel(a_mat, b_mat, ext_state.vec, control)
