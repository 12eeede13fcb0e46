"""Moment matching at Gaussian inputs and the state distribution recursion

For output a with precision Λa, s = Σ̃ and inp = X̃ − μ̃:
    iR = (s + Λa⁻¹)⁻¹,  q_i = σs²·|sΛa + I|^-½·exp(−½ inp_iᵀ iR inp_i)
    E[Δa] = βaᵀq,  Cov[x̃, Δa] = s·iR·inpᵀ(βa∘q)
and the second moments follow from the Gaussian integral over two kernels.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .. import params
from ..errors import PropagationError
from .model import predict_many

def repair_psd(cov):
    """Symmetrize and clamp small negative eigenvalues, fail on larger ones"""
    cov = 0.5 * (cov + cov.T)
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[0] < -params.PSD_CLAMP_TOL:
        raise PropagationError(f"Covariance has eigenvalue {eigvals[0]:.3g} below clamp tolerance")
    if eigvals[0] < 0:
        logging.debug("Clamping covariance eigenvalue %.3g to zero", eigvals[0])
        cov = (eigvecs * np.maximum(eigvals, 0.0)) @ eigvecs.T
        cov = 0.5 * (cov + cov.T)
    return cov

def _check_covariance(cov, name):
    if not np.allclose(cov, cov.T, rtol=0.0, atol=params.PSD_SYMMETRY_TOL * max(1.0, float(np.max(np.abs(cov), initial=0.0)))):
        raise ValueError(f"{name} covariance is not symmetric")
    if cov.shape[0] and np.linalg.eigvalsh(0.5 * (cov + cov.T))[0] < -1e-9:
        raise PropagationError(f"{name} covariance is not positive semi-definite")

@dataclass(frozen=True)
class GaussianState:
    """State distribution N(μ, Σ) at one time step"""
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ValueError(f"cov has shape {cov.shape} for a {mean.shape[0]} dimensional mean")
        _check_covariance(cov, "state")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

@dataclass(frozen=True)
class GaussianInput:
    """Distribution N(μ̃, Σ̃) of a state-control tuple"""
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ValueError(f"cov has shape {cov.shape} for a {mean.shape[0]} dimensional mean")
        _check_covariance(cov, "input")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def from_state(cls, state, control):
        """Deterministic control, zero control and cross blocks"""
        control = np.asarray(control, dtype=float).reshape(-1)
        n, m = state.mean.shape[0], control.shape[0]
        cov = np.zeros((n + m, n + m))
        cov[:n, :n] = state.cov
        return cls(np.concatenate((state.mean, control)), cov)

@dataclass(frozen=True)
class UncertainPrediction:
    """Moments of Δx at an uncertain input"""
    delta_mean: np.ndarray
    delta_cov: np.ndarray
    io_cov: np.ndarray

@dataclass(frozen=True)
class MomentJacobians:
    """Derivatives of the matched moments

    Derivatives with respect to Σ̃ are symmetric gradient matrices G, so a
    symmetric perturbation E changes a moment by Σ G∘E.
    """
    mean_mu: np.ndarray  # (n, E)
    mean_cov: np.ndarray  # (n, E, E)
    cov_mu: np.ndarray  # (n, n, E)
    cov_cov: np.ndarray  # (n, n, E, E)
    cross_mu: np.ndarray  # (E, n, E), Cov[x̃_r, Δa]
    cross_cov: np.ndarray  # (E, n, E, E)

def _sym_last(tensor):
    return 0.5 * (tensor + np.swapaxes(tensor, -1, -2))

def _matched_moments(model, mean, cov, jacobians=False):
    """Mean, covariance and full input-output covariance Cov[x̃, Δ]"""
    inputs = model.dataset.inputs
    n, dim = model.state_dim, model.input_dim
    eye = np.eye(dim)
    inp = inputs - mean

    delta_mean = np.empty(n)
    cross = np.empty((dim, n))
    zetas, logks = [], []
    if jacobians:
        mean_mu = np.empty((n, dim))
        mean_cov = np.empty((n, dim, dim))
        cross_mu = np.empty((dim, n, dim))
        cross_cov = np.empty((dim, n, dim, dim))

    for a, out in enumerate(model.outputs):
        hp = out.hyperparams
        lam = hp.scales
        inv_r = linalg.solve(lam[:, None] * cov + eye, np.diag(lam))
        inv_r = 0.5 * (inv_r + inv_r.T)
        _, logdet = np.linalg.slogdet(cov * lam[None, :] + eye)
        coef = hp.signal_variance * np.exp(-0.5 * logdet)
        tmat = inp @ inv_r
        beta_q = out.alpha * coef * np.exp(-0.5 * np.sum(inp * tmat, axis=1))
        delta_mean[a] = np.sum(beta_q)
        v = inp.T @ beta_q
        s_inv_r = cov @ inv_r
        cross[:, a] = s_inv_r @ v

        zeta = inp * lam
        zetas.append(zeta)
        logks.append(np.log(hp.signal_variance) - 0.5 * np.sum(inp * zeta, axis=1))

        if jacobians:
            mean_mu[a] = inv_r @ v
            dv_dmu = inp.T @ (beta_q[:, None] * inp) @ inv_r - delta_mean[a] * eye
            cross_mu[:, a, :] = s_inv_r @ dv_dmu
            grad_mean = 0.5 * (tmat.T @ (beta_q[:, None] * tmat) - delta_mean[a] * inv_r)
            mean_cov[a] = _sym_last(grad_mean)
            grad_v = 0.5 * np.einsum("i,ir,ik,il->rkl", beta_q, inp, tmat, tmat) \
                - 0.5 * v[:, None, None] * inv_r[None, :, :]
            grad_cross = np.einsum("rk,l->rkl", eye - s_inv_r, inv_r @ v) \
                + np.einsum("rp,pkl->rkl", s_inv_r, grad_v)
            cross_cov[:, a] = _sym_last(grad_cross)

    delta_cov = np.empty((n, n))
    if jacobians:
        cov_mu = np.empty((n, n, dim))
        cov_cov = np.empty((n, n, dim, dim))

    for a in range(n):
        out_a = model.outputs[a]
        for b in range(a, n):
            out_b = model.outputs[b]
            lam_ab = out_a.hyperparams.scales + out_b.hyperparams.scales
            r2 = cov * lam_ab[None, :] + eye
            pmat = linalg.solve(r2, cov)
            pmat = 0.5 * (pmat + pmat.T)
            _, logdet = np.linalg.slogdet(r2)
            za, zb = zetas[a], zetas[b]
            za_p, zb_p = za @ pmat, zb @ pmat
            quad = 0.5 * np.sum(za_p * za, axis=1)[:, None] \
                + 0.5 * np.sum(zb_p * zb, axis=1)[None, :] + za_p @ zb.T
            qmat = np.exp(-0.5 * logdet + logks[a][:, None] + logks[b][None, :] + quad)

            weights = np.outer(out_a.alpha, out_b.alpha)
            if a == b:
                weights = weights - out_a.gram_inv
            weighted = weights * qmat
            value = np.sum(weighted) - delta_mean[a] * delta_mean[b]
            if a == b:
                value += out_a.hyperparams.signal_variance
            delta_cov[a, b] = delta_cov[b, a] = value

            if jacobians:
                gmat = eye - lam_ab[:, None] * pmat
                rows, cols = weighted.sum(axis=1), weighted.sum(axis=0)
                d_mu = gmat @ (za.T @ rows + zb.T @ cols) \
                    - delta_mean[a] * mean_mu[b] - delta_mean[b] * mean_mu[a]
                omega = za.T @ (rows[:, None] * za) + zb.T @ (cols[:, None] * zb) \
                    + za.T @ weighted @ zb + zb.T @ weighted.T @ za
                r2_inv = linalg.solve(r2, eye)
                d_cov = -0.5 * np.sum(weighted) * (lam_ab[:, None] * r2_inv).T \
                    + 0.5 * (gmat @ omega @ r2_inv).T \
                    - delta_mean[a] * mean_cov[b] - delta_mean[b] * mean_cov[a]
                cov_mu[a, b] = cov_mu[b, a] = d_mu
                cov_cov[a, b] = cov_cov[b, a] = _sym_last(d_cov)

    grads = None
    if jacobians:
        grads = MomentJacobians(mean_mu, mean_cov, cov_mu, cov_cov, cross_mu, cross_cov)
    return delta_mean, delta_cov, cross, grads

def predict_uncertain(model, x_input):
    """Exact first and second moments of the GP output at a Gaussian input"""
    if x_input.mean.shape[0] != model.input_dim:
        raise ValueError(f"input has dimension {x_input.mean.shape[0]}, expected {model.input_dim}")
    delta_mean, delta_cov, cross, _ = _matched_moments(model, x_input.mean, x_input.cov)
    n = model.state_dim
    return UncertainPrediction(delta_mean, repair_psd(delta_cov), cross[:n, :])

def predict_uncertain_jacobians(model, x_input):
    """predict_uncertain together with its MomentJacobians"""
    delta_mean, delta_cov, cross, grads = _matched_moments(model, x_input.mean, x_input.cov, jacobians=True)
    n = model.state_dim
    return UncertainPrediction(delta_mean, repair_psd(delta_cov), cross[:n, :]), grads

@dataclass(frozen=True)
class StateJacobians:
    """Derivatives of (μ', Σ') with respect to (μ, Σ, u)

    Σ derivatives are symmetric gradients over the last two axes.
    """
    mean_mean: np.ndarray  # (n, n)
    mean_cov: np.ndarray  # (n, n, n)
    mean_control: np.ndarray  # (n, m)
    cov_mean: np.ndarray  # (n, n, n)
    cov_cov: np.ndarray  # (n, n, n, n)
    cov_control: np.ndarray  # (n, n, m)

def _next_state(state, pred):
    cov = state.cov + pred.delta_cov + pred.io_cov + pred.io_cov.T
    return GaussianState(state.mean + pred.delta_mean, repair_psd(cov))

def propagate_state(model, state, control):
    """μ' = μ + E[Δ], Σ' = Σ + Cov[Δ] + Cov[x, Δ] + Cov[Δ, x]"""
    pred = predict_uncertain(model, GaussianInput.from_state(state, control))
    return _next_state(state, pred)

def propagate_state_jacobians(model, state, control):
    """propagate_state together with StateJacobians"""
    pred, grads = predict_uncertain_jacobians(model, GaussianInput.from_state(state, control))
    n = model.state_dim
    eye = np.eye(n)

    cross_mu = grads.cross_mu[:n]
    cross_cov = grads.cross_cov[:n]
    cov_mu = grads.cov_mu + cross_mu + np.swapaxes(cross_mu, 0, 1)
    identity = 0.5 * (np.einsum("ik,jl->ijkl", eye, eye) + np.einsum("il,jk->ijkl", eye, eye))
    cov_cov = identity + grads.cov_cov[..., :n, :n] + cross_cov[..., :n, :n] \
        + np.swapaxes(cross_cov[..., :n, :n], 0, 1)

    jac = StateJacobians(
        mean_mean=eye + grads.mean_mu[:, :n],
        mean_cov=grads.mean_cov[:, :n, :n],
        mean_control=grads.mean_mu[:, n:],
        cov_mean=cov_mu[..., :n],
        cov_cov=cov_cov,
        cov_control=cov_mu[..., n:],
    )
    return _next_state(state, pred), jac

def one_step_posterior(model, state_mean, control):
    """N(x + m(x, u), diag(var)) for a measured state"""
    x_input = np.concatenate((np.asarray(state_mean, dtype=float), np.asarray(control, dtype=float)))
    means, variances = predict_many(model, x_input)
    return GaussianState(state_mean + means[0], np.diag(variances[0]))

def rollout(model, init, controls):
    """H+1 states, init followed by successive propagations"""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    if controls.shape[0] < 1:
        raise ValueError("rollout needs at least one control")
    states = [init]
    for control in controls:
        states.append(propagate_state(model, states[-1], control))

    traces = [np.trace(state.cov) for state in states]
    if np.any(np.diff(traces) < -1e-12):
        logging.info("Rollout variance trace decreased along the horizon")
    return states

@dataclass(frozen=True)
class MonteCarloMoments:
    """Empirical moments and their standard errors"""
    mean: np.ndarray
    cov: np.ndarray
    io_cov: np.ndarray
    mean_se: np.ndarray
    cov_se: np.ndarray
    io_cov_se: np.ndarray
    samples: int

def _psd_factor(cov):
    eigvals, eigvecs = np.linalg.eigh(0.5 * (cov + cov.T))
    return eigvecs * np.sqrt(np.maximum(eigvals, 0.0))

def _chunk_sizes(samples):
    full, rest = divmod(samples, params.MC_CHUNK_SIZE)
    return [params.MC_CHUNK_SIZE] * full + ([rest] if rest else [])

def _pair_moment(left, right):
    values = left * right
    return values.mean(), values.std(ddof=1) / np.sqrt(values.shape[0])

def mc_oracle(model, x_input, samples, seed, jobs=1):
    """Sampled moments of Δx at a Gaussian input

    Uses the conditional estimator: mean of conditional means, covariance of
    conditional means plus mean conditional variance. Chunks draw from
    counter derived seeds, so the result does not depend on ``jobs``.
    """
    if samples < 1000:
        raise ValueError("mc_oracle needs at least 1000 samples")
    factor = _psd_factor(x_input.cov)

    def draw(index, count):
        rng = params.derive_rng(seed, index)
        points = x_input.mean + rng.standard_normal((count, x_input.mean.shape[0])) @ factor.T
        means, variances = predict_many(model, points)
        return points, means, variances

    sizes = _chunk_sizes(samples)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(draw, range(len(sizes)), sizes))
    else:
        chunks = [draw(index, count) for index, count in enumerate(sizes)]

    points = np.concatenate([c[0] for c in chunks])
    means = np.concatenate([c[1] for c in chunks])
    variances = np.concatenate([c[2] for c in chunks])

    n, dim = means.shape[1], points.shape[1]
    mean = means.mean(axis=0)
    mean_se = means.std(axis=0, ddof=1) / np.sqrt(samples)
    centred = means - mean
    centred_points = points - points.mean(axis=0)

    cov, cov_se = np.empty((n, n)), np.empty((n, n))
    for a in range(n):
        for b in range(a, n):
            values = centred[:, a] * centred[:, b]
            if a == b:
                values = values + variances[:, a]
            cov[a, b] = cov[b, a] = values.mean()
            cov_se[a, b] = cov_se[b, a] = values.std(ddof=1) / np.sqrt(samples)

    io_cov, io_cov_se = np.empty((dim, n)), np.empty((dim, n))
    for r in range(dim):
        for a in range(n):
            io_cov[r, a], io_cov_se[r, a] = _pair_moment(centred_points[:, r], centred[:, a])
    return MonteCarloMoments(mean, cov, io_cov, mean_se, cov_se, io_cov_se, samples)

def mc_rollout(model, init, controls, samples, seed):
    """Sampled state moments along a rollout, latent GP noise carried forward

    Returns one (mean, cov, mean_se, cov_se) tuple per propagated step.
    """
    if samples < 1000:
        raise ValueError("mc_rollout needs at least 1000 samples")
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    rng = params.derive_rng(seed, 0)
    states = init.mean + rng.standard_normal((samples, init.mean.shape[0])) @ _psd_factor(init.cov).T

    moments = []
    for control in controls:
        points = np.hstack((states, np.broadcast_to(control, (samples, control.shape[0]))))
        means, variances = predict_many(model, points)
        states = states + means + np.sqrt(variances) * rng.standard_normal(means.shape)

        mean = states.mean(axis=0)
        centred = states - mean
        n = mean.shape[0]
        cov, cov_se = np.empty((n, n)), np.empty((n, n))
        for a in range(n):
            for b in range(a, n):
                cov[a, b], cov_se[a, b] = _pair_moment(centred[:, a], centred[:, b])
                cov[b, a], cov_se[b, a] = cov[a, b], cov_se[a, b]
        moments.append((mean, cov, states.std(axis=0, ddof=1) / np.sqrt(samples), cov_se))
    return moments

def moment_errors(pred, empirical, absolute=1e-10):
    """Largest standardized deviation |predicted − sampled| / (se + absolute)"""
    n = pred.delta_mean.shape[0]
    pairs = (
        (pred.delta_mean, empirical.mean, empirical.mean_se),
        (pred.delta_cov, empirical.cov, empirical.cov_se),
        (pred.io_cov, empirical.io_cov[:n], empirical.io_cov_se[:n]),
    )
    return max(float(np.max(np.abs(predicted - sampled) / (error + absolute))) for predicted, sampled, error in pairs)
