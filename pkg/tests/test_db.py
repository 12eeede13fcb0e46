import numpy as np
import pytest
from sqlalchemy.sql.expression import select

from gpmpcbench import db
from gpmpcbench.bench.metrics import TrackingMetrics
from gpmpcbench.errors import ConfigError

SUMMARY = {"task": "step", "controller": "gpmpc2", "horizon": 10, "steps": 189, "seed": 7}

def sample_metrics(scale=1.0):
    return TrackingMetrics(
        mse=scale * np.array([0.1, 0.2]), iae=scale * np.array([3.0, 4.0]), mean_solve_ms=5.0, steps=189,
    )

def test_record_and_load(tmp_path):
    path = tmp_path / "results.db"
    session_factory = db.startup.create_database_file(path)
    run_id = db.runs.record_run(
        session_factory, SUMMARY, [(0, sample_metrics(), None), (1, None, "Controller failed at step 4")]
    )
    assert run_id == 1

    summary, trials = db.runs.load_run(path)
    assert summary == {"task": "step", "controller": "gpmpc2", "horizon": 10, "steps": 189, "trials": 2, "failed": 1}
    assert trials["trial"].tolist() == [0]
    assert trials["mse_y2"].iloc[0] == pytest.approx(0.2)
    assert trials["iae_y1"].iloc[0] == pytest.approx(3.0)

def test_failed_trials_keep_message(tmp_path):
    path = tmp_path / "results.db"
    session_factory = db.startup.create_database_file(path)
    db.runs.record_run(session_factory, SUMMARY, [(0, None, "boom")])
    with session_factory() as session:
        row = session.scalars(select(db.TrialResult)).one()
    assert not row.succeeded
    assert row.failure == "boom"
    assert row.mse_y1 is None

def test_database_is_recreated(tmp_path):
    path = tmp_path / "results.db"
    db.runs.record_run(db.startup.create_database_file(path), SUMMARY, [(0, sample_metrics(), None)])
    db.runs.record_run(db.startup.create_database_file(path), SUMMARY, [(0, sample_metrics(2.0), None)])
    _, session_factory = db.open_database(path)
    with session_factory() as session:
        assert len(session.scalars(select(db.SimulationRun)).all()) == 1

def test_version_is_written(tmp_path):
    session_factory = db.startup.create_database_file(tmp_path / "results.db")
    assert db.version.get_database_version(session_factory) == (
        db.version.DATABASE_VERSION_MAJOR, db.version.DATABASE_VERSION_MINOR
    )

def test_newer_version_rejected(tmp_path):
    path = tmp_path / "results.db"
    session_factory = db.startup.create_database_file(path)
    db.runs.record_run(session_factory, SUMMARY, [(0, sample_metrics(), None)])
    with session_factory() as session:
        version = session.scalars(select(db.version.DatabaseVersion)).one()
        version.major = db.version.DATABASE_VERSION_MAJOR + 1
        session.commit()
    with pytest.raises(ConfigError) as info:
        db.runs.load_run(path)
    assert "Unknown database version" in str(info.value)

def test_missing_database(tmp_path):
    with pytest.raises(ConfigError) as info:
        db.runs.load_run(tmp_path / "results.db")
    assert info.value.field == "run_dir"
