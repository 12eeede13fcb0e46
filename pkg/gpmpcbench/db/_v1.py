"""V1 Database Classes

Current version
"""
# pylint: disable=too-few-public-methods

from typing import Optional

from sqlalchemy import ForeignKey
from sqlalchemy.orm import Mapped, mapped_column
from sqlalchemy.types import String

from ._base import ResultsBase

class SimulationRun(ResultsBase):
    """One simulate invocation"""
    __tablename__ = "simulation_run"

    id: Mapped[int] = mapped_column(primary_key=True)
    task: Mapped[str] = mapped_column(String(32))
    controller: Mapped[str] = mapped_column(String(32))
    horizon: Mapped[int]
    steps: Mapped[int]
    master_seed: Mapped[int]
    trials: Mapped[int]
    failed: Mapped[int] = mapped_column(insert_default=0)

class TrialResult(ResultsBase):
    """Metrics of one closed loop trial, empty when it failed"""
    __tablename__ = "trial_result"

    id: Mapped[int] = mapped_column(primary_key=True)
    run_id: Mapped[int] = mapped_column(ForeignKey("simulation_run.id"))
    trial: Mapped[int]
    succeeded: Mapped[bool]
    mse_y1: Mapped[Optional[float]] = mapped_column(nullable=True)
    mse_y2: Mapped[Optional[float]] = mapped_column(nullable=True)
    iae_y1: Mapped[Optional[float]] = mapped_column(nullable=True)
    iae_y2: Mapped[Optional[float]] = mapped_column(nullable=True)
    mean_solve_ms: Mapped[Optional[float]] = mapped_column(nullable=True)
    failure: Mapped[Optional[str]] = mapped_column(String(512), nullable=True)
