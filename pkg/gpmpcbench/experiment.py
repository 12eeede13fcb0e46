"""train, simulate and compare runs"""

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from . import db, params
from .bench.data import collect_training_data, read_dataset, write_dataset
from .bench.metrics import metrics
from .bench.plant import BenchmarkPlant, complete_reference
from .bench.references import read_reference, reference_lorenz, reference_step, write_reference
from .control.config import ReferenceTrajectory
from .control.gpmpc1 import Gpmpc1Controller
from .control.gpmpc2 import Gpmpc2Controller
from .control.loop import lyapunov_diagnostic, run_receding_horizon
from .errors import ConfigError, ControllerError, GpmpcError
from .gp.model import train, training_mse
from .gp.storage import load_model, save_model

def write_json(document, path):
    """Sorted keys and repr floats, so equal documents give equal bytes"""
    with open(path, "w", encoding="utf-8") as file:
        json.dump(document, file, sort_keys=True, indent=1)
        file.write("\n")
    logging.info("Wrote '%s'", path)

def report_path(model_path):
    return str(Path(model_path).with_suffix(params.REPORT_SUFFIX))

def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)

def load_or_collect_dataset(cfg):
    """Read the dataset CSV, collecting and writing it first if it is absent"""
    if os.path.exists(cfg.dataset_path):
        return read_dataset(cfg.dataset_path)
    logging.info("Dataset '%s' not found, collecting %d samples", cfg.dataset_path, cfg.data.samples)
    dataset = collect_training_data(
        BenchmarkPlant(), cfg.data.policy, cfg.data.samples, cfg.excitation_bounds,
        np.random.SeedSequence(cfg.seed, spawn_key=(params.SEED_KEY_DATA,)), hold=cfg.data.hold,
    )
    _ensure_parent(cfg.dataset_path)
    write_dataset(dataset, cfg.dataset_path)
    # Train on the rounded CSV values so a later retrain sees the same numbers
    return read_dataset(cfg.dataset_path)

def run_train(cfg):
    """Fit the GP model, write model JSON and its training report"""
    started = time.perf_counter()
    dataset = load_or_collect_dataset(cfg).subset(cfg.data.fraction)
    model = train(dataset, cfg.training)
    wall_time = time.perf_counter() - started

    state_mse = training_mse(model)
    report = {
        "samples": dataset.size,
        "fraction": cfg.data.fraction,
        "log_likelihoods": list(model.log_likelihoods),
        "state_training_mse": [float(value) for value in state_mse],
        "training_mse": {
            f"y{index + 1}": float(state_mse[dim]) for index, dim in enumerate(params.OUTPUT_INDICES)
        },
        "wall_time_s": wall_time if cfg.record_timing else 0.0,
    }
    _ensure_parent(cfg.model_path)
    save_model(model, cfg.model_path)
    write_json(report, report_path(cfg.model_path))
    return report

def build_reference(cfg):
    """(output reference, full state reference) covering steps + horizon + 1 points"""
    length = cfg.steps + cfg.mpc.horizon + 1
    ref_cfg = cfg.reference
    if ref_cfg.kind == "step":
        outputs = reference_step(length, ref_cfg.levels, ref_cfg.switch_steps)
    elif ref_cfg.kind == "lorenz":
        outputs = reference_lorenz(length, ref_cfg.lorenz)
    else:
        outputs = read_reference(ref_cfg.path)
        if len(outputs) < length:
            raise ConfigError("reference.path", f"needs at least {length} points, got {len(outputs)}")
    return outputs, ReferenceTrajectory(complete_reference(outputs.points))

def build_controller(cfg, model):
    if cfg.controller == "gpmpc1":
        return Gpmpc1Controller(model, cfg.mpc, cfg.sqp)
    return Gpmpc2Controller(model, cfg.mpc)

def trial_seed(master_seed, trial):
    return np.random.SeedSequence(master_seed, spawn_key=(params.SEED_KEY_TRIAL, trial))

def _run_trial(cfg, model, ref, trial):
    controller = build_controller(cfg, model)
    try:
        log = run_receding_horizon(
            controller, BenchmarkPlant(), ref, cfg.steps, cfg.mpc, trial_seed(cfg.seed, trial),
            record_timing=cfg.record_timing,
        )
    except ControllerError as err:
        logging.warning("Trial %d failed: %s", trial, err)
        return trial, err.log, err
    return trial, log, None

def run_simulate(cfg):
    """Closed loop trials, per-trial CSVs, metrics JSON and results database"""
    model = load_model(cfg.model_path)
    outputs, ref = build_reference(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    write_reference(outputs, os.path.join(cfg.output_dir, params.REFERENCE_NAME))

    trials = range(cfg.trials)
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(lambda trial: _run_trial(cfg, model, ref, trial), trials))
    else:
        results = [_run_trial(cfg, model, ref, trial) for trial in trials]

    per_trial, failures, outcomes = [], [], []
    for trial, log, error in results:
        if len(log) > 0:
            log.write_csv(os.path.join(cfg.output_dir, params.TRIAL_NAME_FORMAT.format(trial)))
        if error is not None:
            failures.append({"trial": trial, "step": error.step, "message": str(error)})
            outcomes.append((trial, None, str(error)[:512]))
            continue
        result = metrics(log)
        lyapunov = lyapunov_diagnostic(log, cfg.mpc)
        per_trial.append({"trial": trial, "lyapunov_violations": int(lyapunov.violations.size), **result.to_document()})
        outcomes.append((trial, result, None))
        logging.info("Trial %d: MSE %s, IAE %s", trial, result.mse, result.iae)

    aggregate = {"succeeded": len(per_trial), "failed": len(failures)}
    if per_trial:
        aggregate.update({
            "mse": np.mean([entry["mse"] for entry in per_trial], axis=0).tolist(),
            "iae": np.mean([entry["iae"] for entry in per_trial], axis=0).tolist(),
            "mean_solve_ms": float(np.mean([entry["mean_solve_ms"] for entry in per_trial])),
        })
    summary = {
        "task": cfg.task,
        "controller": cfg.controller,
        "horizon": cfg.mpc.horizon,
        "steps": cfg.steps,
        "seed": cfg.seed,
    }
    write_json(
        {**summary, "trials": per_trial, "failures": failures, "aggregate": aggregate},
        os.path.join(cfg.output_dir, params.METRICS_NAME),
    )
    session_factory = db.startup.create_database_file(os.path.join(cfg.output_dir, params.DATABASE_NAME))
    db.runs.record_run(session_factory, summary, outcomes)

    if len(failures) > params.MAX_FAILED_TRIAL_FRACTION * cfg.trials:
        raise GpmpcError(f"{len(failures)} of {cfg.trials} trials failed")
    return aggregate

COMPARED_COLUMNS = ("mse_y1", "mse_y2", "iae_y1", "iae_y2", "mean_solve_ms")

def _ratio(value, base):
    if value == base:
        return 1.0
    return value / base if base != 0 else float("inf")

def run_compare(run_dirs, out_dir):
    """Table of mean metrics per run with ratios against the first run"""
    if len(run_dirs) < 2:
        raise ConfigError("run_dir", "at least two run directories are needed")
    rows = []
    for run_dir in run_dirs:
        if not os.path.isdir(run_dir):
            raise ConfigError("run_dir", f"'{run_dir}' does not exist")
        summary, trials = db.runs.load_run(os.path.join(run_dir, params.DATABASE_NAME))
        if trials.empty:
            raise ConfigError("run_dir", f"'{run_dir}' has no successful trials")
        rows.append({
            "run": os.path.basename(os.path.normpath(run_dir)),
            "task": summary["task"],
            "controller": summary["controller"],
            "horizon": summary["horizon"],
            "trials": summary["trials"],
            "failed": summary["failed"],
            **{column: float(trials[column].mean()) for column in COMPARED_COLUMNS},
        })

    tasks = sorted({row["task"] for row in rows})
    if len(tasks) > 1:
        raise ConfigError("run_dir", f"runs are for different tasks: {', '.join(tasks)}")

    base = rows[0]
    for row in rows:
        for column in COMPARED_COLUMNS:
            row[f"{column}_ratio"] = _ratio(row[column], base[column])
    table = pd.DataFrame(rows)
    os.makedirs(out_dir, exist_ok=True)
    table.to_csv(os.path.join(out_dir, params.COMPARISON_NAME), index=False, float_format=params.CSV_FLOAT_FORMAT)
    logging.info("Compared %d runs of the %s task", len(rows), tasks[0])
    return table
