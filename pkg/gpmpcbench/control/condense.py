"""Condensed QP over the control increment sequence

Velocity form of the extended local model:
    Z = 1⊗s_k + T_z(ÃΔs_k + B̃ΔU),   U = 1⊗u_{k-1} + T_uΔU
and the horizon cost is ½ΔUᵀΦΔU + ψᵀΔU + C.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .config import VarianceWeight
from .cost import expected_cost, tighten_constraints
from ..solvers.active_set import QpProblem

@dataclass(frozen=True)
class CondensedQp:
    phi: np.ndarray
    psi: np.ndarray
    const_c: float
    g_mat: np.ndarray
    g_rhs: np.ndarray
    t_u: np.ndarray
    t_z: np.ndarray
    a_tilde: np.ndarray
    b_tilde: np.ndarray
    m_z: np.ndarray
    s_k: np.ndarray
    ds_k: np.ndarray
    u_prev: np.ndarray
    ref: np.ndarray

    @property
    def horizon(self):
        return self.ref.shape[0]

    @property
    def state_dim(self):
        return self.ref.shape[1]

    def qp_problem(self):
        return QpProblem(self.phi, self.psi, self.g_mat, self.g_rhs)

    def objective(self, delta_u):
        return float(0.5 * delta_u @ self.phi @ delta_u + self.psi @ delta_u + self.const_c)

    def predict(self, delta_u):
        """Stacked extended states (H, n+n²) and controls (H, m)"""
        horizon, ext_dim = self.horizon, self.s_k.shape[0]
        stacked = np.tile(self.s_k, horizon) + self.t_z @ (self.a_tilde @ self.ds_k + self.b_tilde @ delta_u)
        controls = np.tile(self.u_prev, horizon) + self.t_u @ delta_u
        return stacked.reshape(horizon, ext_dim), controls.reshape(horizon, -1)

    def predicted_moments(self, delta_u):
        """Means and covariances Σ = S·Sᵀ along the horizon"""
        stacked, controls = self.predict(delta_u)
        n = self.state_dim
        roots = stacked[:, n:].reshape(-1, n, n)
        covs = np.einsum("hij,hkj->hik", roots, roots)
        return stacked[:, :n], 0.5 * (covs + np.swapaxes(covs, 1, 2)), controls

def direct_cost(cqp, delta_u, cfg):
    """Expected cost evaluated on the states generated by ΔU"""
    means, covs, controls = cqp.predicted_moments(delta_u)
    return expected_cost(means, covs, controls, cqp.ref, cfg)

def _variance_weight(cfg):
    n = cfg.state_dim
    if cfg.variance_weight is VarianceWeight.DIAGONAL:
        return np.diag(cfg.q_mat.ravel())
    return np.kron(cfg.q_mat, np.eye(n))

def _stacking(a_mat, b_mat, horizon):
    ext_dim, m = b_mat.shape
    powers = [np.eye(ext_dim)]
    for _ in range(horizon):
        powers.append(a_mat @ powers[-1])
    a_tilde = np.vstack(powers[1:])
    b_tilde = np.zeros((horizon * ext_dim, horizon * m))
    for row in range(horizon):
        for col in range(row + 1):
            b_tilde[row * ext_dim:(row + 1) * ext_dim, col * m:(col + 1) * m] = powers[row - col] @ b_mat
    lower = np.tril(np.ones((horizon, horizon)))
    return a_tilde, b_tilde, np.kron(lower, np.eye(ext_dim)), np.kron(lower, np.eye(m))

def build_condensed_qp(ext_model, s_k, ds_k, u_prev, ref, cfg):
    """Φ, ψ, C and the stacked control and tightened state rows"""
    s_k = np.asarray(getattr(s_k, "vec", s_k), dtype=float)
    ds_k = np.asarray(ds_k, dtype=float)
    u_prev = np.asarray(u_prev, dtype=float)
    ref = np.atleast_2d(np.asarray(ref, dtype=float))
    horizon, n, m = cfg.horizon, cfg.state_dim, cfg.control_dim
    ext_dim = n + n * n
    if ext_model.a_mat.shape != (ext_dim, ext_dim) or ext_model.b_mat.shape != (ext_dim, m):
        raise ValueError("local model does not match the controller dimensions")
    if s_k.shape != (ext_dim,) or ds_k.shape != (ext_dim,) or u_prev.shape != (m,):
        raise ValueError("operating point does not match the controller dimensions")
    if ref.shape != (horizon, n):
        raise ValueError(f"reference window has shape {ref.shape}, expected {(horizon, n)}")

    a_tilde, b_tilde, t_z, t_u = _stacking(ext_model.a_mat, ext_model.b_mat, horizon)
    q_ext = linalg.block_diag(cfg.q_mat, _variance_weight(cfg))
    q_tilde = np.kron(np.eye(horizon), q_ext)
    r_tilde = np.kron(np.eye(horizon), cfg.r_mat)

    nominal = np.tile(s_k, horizon) + t_z @ a_tilde @ ds_k
    gamma = t_z @ b_tilde
    u_bar = np.tile(u_prev, horizon)
    ref_ext = np.hstack((ref, np.zeros((horizon, n * n)))).ravel()
    offset = nominal - ref_ext

    phi = 2.0 * (gamma.T @ q_tilde @ gamma + t_u.T @ r_tilde @ t_u)
    psi = 2.0 * (gamma.T @ q_tilde @ offset + t_u.T @ r_tilde @ u_bar)
    const_c = float(offset @ q_tilde @ offset + u_bar @ r_tilde @ u_bar)

    m_z = np.kron(np.eye(horizon), np.hstack((np.eye(n), np.zeros((n, n * n)))))
    rows = [t_u, -t_u]
    rhs = [np.tile(cfg.u_max, horizon) - u_bar, u_bar - np.tile(cfg.u_min, horizon)]

    # State rows bound the means, tightened by the nominal (ΔU = 0) covariance
    mean_rows = m_z @ gamma
    nominal_blocks = nominal.reshape(horizon, ext_dim)
    for step in range(horizon):
        root = nominal_blocks[step, n:].reshape(n, n)
        lower, upper = tighten_constraints((cfg.x_min, cfg.x_max), root @ root.T, cfg, step=step + 1)
        block = mean_rows[step * n:(step + 1) * n]
        mean = nominal_blocks[step, :n]
        upper_rows, lower_rows = np.isfinite(upper), np.isfinite(lower)
        rows.extend((block[upper_rows], -block[lower_rows]))
        rhs.extend((upper[upper_rows] - mean[upper_rows], mean[lower_rows] - lower[lower_rows]))

    return CondensedQp(
        phi=0.5 * (phi + phi.T), psi=psi, const_c=const_c,
        g_mat=np.vstack(rows), g_rhs=np.concatenate(rhs),
        t_u=t_u, t_z=t_z, a_tilde=a_tilde, b_tilde=b_tilde, m_z=m_z,
        s_k=s_k, ds_k=ds_k, u_prev=u_prev, ref=ref,
    )
