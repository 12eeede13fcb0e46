"""Output tracking metrics"""

from dataclasses import dataclass

import numpy as np

@dataclass(frozen=True)
class TrackingMetrics:
    mse: np.ndarray
    iae: np.ndarray
    mean_solve_ms: float
    steps: int

    def to_document(self):
        return {
            "mse": self.mse.tolist(),
            "iae": self.iae.tolist(),
            "mean_solve_ms": self.mean_solve_ms,
            "steps": self.steps,
        }

def iae_sequence(log):
    """Running sum of |y − r| per output, one row per step"""
    if len(log) == 0:
        raise ValueError("log is empty")
    return np.cumsum(np.abs(log.tracking_errors()), axis=0)

def metrics(log):
    """Mean squared and integrated absolute tracking error per output"""
    if len(log) == 0:
        raise ValueError("log is empty")
    errors = log.tracking_errors()
    return TrackingMetrics(
        mse=np.mean(errors ** 2, axis=0),
        iae=np.sum(np.abs(errors), axis=0),
        mean_solve_ms=float(np.mean(log.column("solve_ms"))),
        steps=len(log),
    )
