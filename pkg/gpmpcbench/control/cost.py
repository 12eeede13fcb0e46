"""Expected horizon cost and chance constraint tightening"""

import numpy as np

from .. import params
from ..errors import InfeasibleConstraintsError
from .config import TighteningMode

def stage_cost(mean, cov, control, ref, cfg):
    """‖μ − r‖²_Q + ‖u‖²_R + trace(QΣ) for one step"""
    error = np.asarray(mean) - np.asarray(ref)
    control = np.asarray(control)
    return float(error @ cfg.q_mat @ error + control @ cfg.r_mat @ control + np.trace(cfg.q_mat @ cov))

def expected_cost(means, covs, controls, ref, cfg):
    """Sum of the stage costs, controls u_k..u_{k+H-1} paired with states x_{k+1}..x_{k+H}"""
    if not len(means) == len(covs) == len(controls) == len(ref):
        raise ValueError("means, covs, controls and ref must have the same length")
    return sum(stage_cost(*terms, cfg) for terms in zip(means, covs, controls, ref))

def tightening_margin(cov, cfg):
    """Per-dimension bound shrinkage for the 95% chance constraints"""
    variances = np.maximum(np.diag(np.atleast_2d(cov)), 0.0)
    if cfg.tightening_mode is TighteningMode.TWO_STD:
        return params.TIGHTENING_FACTOR * np.sqrt(variances)
    return params.TIGHTENING_FACTOR * variances

def tighten_constraints(mean_bounds, cov, cfg, step=0):
    """Bounds on μ such that x stays within mean_bounds with 95% confidence"""
    x_min, x_max = (np.asarray(bound, dtype=float) for bound in mean_bounds)
    margin = tightening_margin(cov, cfg)
    lower, upper = x_min + margin, x_max - margin
    crossed = np.flatnonzero(lower > upper)
    if crossed.size:
        dim = int(crossed[0])
        raise InfeasibleConstraintsError(dim, step, float(lower[dim]), float(upper[dim]))
    return lower, upper
