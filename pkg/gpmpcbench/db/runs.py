"""Recording and reading simulation runs"""

import os

import pandas as pd
from sqlalchemy.sql.expression import select

from ._base import open_database
from ._v1 import SimulationRun, TrialResult
from .version import check_database_version
from ..errors import ConfigError

def record_run(session_factory, summary, outcomes):
    """Store a run summary and its per-trial outcomes, returns the run id

    ``outcomes`` holds (trial, TrackingMetrics or None, failure message or None).
    """
    with session_factory() as session:
        run = SimulationRun(
            task=summary["task"],
            controller=summary["controller"],
            horizon=summary["horizon"],
            steps=summary["steps"],
            master_seed=summary["seed"],
            trials=len(outcomes),
            failed=sum(1 for _, result, _ in outcomes if result is None),
        )
        session.add(run)
        session.flush()
        for trial, result, failure in outcomes:
            row = TrialResult(run_id=run.id, trial=trial, succeeded=result is not None, failure=failure)
            if result is not None:
                row.mse_y1, row.mse_y2 = (float(value) for value in result.mse)
                row.iae_y1, row.iae_y2 = (float(value) for value in result.iae)
                row.mean_solve_ms = result.mean_solve_ms
            session.add(row)
        session.commit()
        return run.id

def load_run(path):
    """(run summary dict, DataFrame of successful trials) from a results database"""
    if not os.path.isfile(path):
        raise ConfigError("run_dir", f"'{path}' does not exist")
    _, session_factory = open_database(path)
    check_database_version(session_factory)
    with session_factory() as session:
        run = session.scalars(select(SimulationRun).order_by(SimulationRun.id.desc()).limit(1)).one_or_none()
        if run is None:
            raise ConfigError("run_dir", f"'{path}' holds no simulation run")
        summary = {
            "task": run.task,
            "controller": run.controller,
            "horizon": run.horizon,
            "steps": run.steps,
            "trials": run.trials,
            "failed": run.failed,
        }
        rows = session.scalars(
            select(TrialResult).where(TrialResult.run_id == run.id, TrialResult.succeeded).order_by(TrialResult.trial)
        ).all()
        trials = pd.DataFrame([
            {
                "trial": row.trial,
                "mse_y1": row.mse_y1,
                "mse_y2": row.mse_y2,
                "iae_y1": row.iae_y1,
                "iae_y2": row.iae_y2,
                "mean_solve_ms": row.mean_solve_ms,
            }
            for row in rows
        ], columns=["trial", "mse_y1", "mse_y2", "iae_y1", "iae_y2", "mean_solve_ms"])
    return summary, trials
