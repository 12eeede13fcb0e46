"""JSON run configuration

Every key is checked before any computation; unknown keys are an error.
"""

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import params
from .bench.data import ExcitationPolicy
from .bench.plant import TASKS
from .bench.references import DEFAULT_STEP_LEVELS, DEFAULT_STEP_SWITCHES, LorenzParams
from .control.config import MpcConfig, TighteningMode, VarianceWeight
from .errors import ConfigError
from .gp.model import TrainingSettings
from .solvers.fpsqp import SqpSettings

CONTROLLERS = ("gpmpc1", "gpmpc2")
REFERENCE_KINDS = ("step", "lorenz", "csv")

class _Section:
    """Reads typed keys out of one JSON object, tracking the field path"""
    def __init__(self, document, path, allowed):
        if not isinstance(document, dict):
            raise ConfigError(path or "config", "must be a JSON object")
        unknown = sorted(set(document) - set(allowed))
        if unknown:
            raise ConfigError(self._join(path, unknown[0]), "unknown key")
        self._document = document
        self._path = path

    @staticmethod
    def _join(path, key):
        return f"{path}.{key}" if path else key

    def field_path(self, key):
        return self._join(self._path, key)

    def raw(self, key, default=None):
        return self._document.get(key, default)

    def integer(self, key, default, minimum=None):
        value = self._document.get(key, default)
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(self.field_path(key), "must be an integer")
        if minimum is not None and value < minimum:
            raise ConfigError(self.field_path(key), f"must be at least {minimum}")
        return value

    def number(self, key, default, positive=False):
        value = self._document.get(key, default)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(self.field_path(key), "must be a finite number")
        if positive and value <= 0:
            raise ConfigError(self.field_path(key), "must be positive")
        return float(value)

    def boolean(self, key, default):
        value = self._document.get(key, default)
        if not isinstance(value, bool):
            raise ConfigError(self.field_path(key), "must be true or false")
        return value

    def string(self, key, default=None, choices=None):
        value = self._document.get(key, default)
        if value is None:
            raise ConfigError(self.field_path(key), "is required")
        if not isinstance(value, str):
            raise ConfigError(self.field_path(key), "must be a string")
        if choices is not None and value not in choices:
            raise ConfigError(self.field_path(key), f"must be one of {', '.join(choices)}")
        return value

    def vector(self, key, default, size=None, allow_infinite=False):
        value = self._document.get(key, default)
        if value is None:
            return None
        if not isinstance(value, list) or not all(
            item is None or (isinstance(item, (int, float)) and not isinstance(item, bool)) for item in value
        ):
            raise ConfigError(self.field_path(key), "must be a list of numbers")
        if size is not None and len(value) != size:
            raise ConfigError(self.field_path(key), f"must have {size} entries")
        if not allow_infinite and any(item is None for item in value):
            raise ConfigError(self.field_path(key), "entries must be finite")
        # JSON has no infinity, null means unbounded
        return tuple(math.nan if item is None else float(item) for item in value)

    def section(self, key, allowed):
        return _Section(self._document.get(key, {}), self.field_path(key), allowed)

@dataclass(frozen=True)
class DataConfig:
    policy: ExcitationPolicy = ExcitationPolicy.UNIFORM
    samples: int = params.DEFAULT_STEPS
    hold: int = 5
    u_min: Optional[tuple] = None
    u_max: Optional[tuple] = None
    fraction: float = 1.0

@dataclass(frozen=True)
class ReferenceConfig:
    kind: str = "step"
    levels: tuple = DEFAULT_STEP_LEVELS
    switch_steps: tuple = DEFAULT_STEP_SWITCHES
    lorenz: LorenzParams = field(default_factory=LorenzParams)
    path: Optional[str] = None

@dataclass(frozen=True)
class RunConfig:
    task: str
    controller: str
    output_dir: str
    model_path: str
    dataset_path: str
    seed: int = 0
    steps: int = params.DEFAULT_STEPS
    trials: int = params.DEFAULT_TRIALS
    jobs: int = 1
    record_timing: bool = True
    data: DataConfig = field(default_factory=DataConfig)
    training: TrainingSettings = field(default_factory=TrainingSettings)
    mpc: Optional[MpcConfig] = None
    sqp: SqpSettings = field(default_factory=SqpSettings)
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)

    @property
    def excitation_bounds(self):
        task = TASKS[self.task]
        return (
            np.asarray(self.data.u_min if self.data.u_min is not None else task.u_min),
            np.asarray(self.data.u_max if self.data.u_max is not None else task.u_max),
        )

    def with_overrides(self, output_dir=None, seed=None, jobs=None):
        """CLI flags take precedence over the document"""
        changes = {}
        if output_dir is not None:
            changes["output_dir"] = output_dir
        if seed is not None:
            if seed < 0 or seed >= 2 ** 64:
                raise ConfigError("seed", "must be an unsigned 64 bit integer")
            changes["seed"] = seed
        if jobs is not None:
            if jobs < 1:
                raise ConfigError("jobs", "must be at least 1")
            changes["jobs"] = jobs
        if not changes:
            return self
        updated = replace(self, **changes)
        updated = replace(updated, training=replace(updated.training, seed=updated.seed, jobs=updated.jobs))
        return updated

def _parse_data(section, task):
    data = section.section("data", ("policy", "samples", "hold", "u_min", "u_max", "fraction"))
    policy = data.string("policy", ExcitationPolicy.UNIFORM.value, [item.value for item in ExcitationPolicy])
    u_min = data.vector("u_min", None, size=params.CONTROL_DIM)
    u_max = data.vector("u_max", None, size=params.CONTROL_DIM)
    task_spec = TASKS[task]
    low = np.asarray(u_min if u_min is not None else task_spec.u_min)
    high = np.asarray(u_max if u_max is not None else task_spec.u_max)
    if np.any(low > high) or np.any(low < task_spec.u_min) or np.any(high > task_spec.u_max):
        raise ConfigError(data.field_path("u_min"), "excitation bounds must lie inside the task bounds")
    fraction = data.number("fraction", 1.0, positive=True)
    if fraction > 1.0:
        raise ConfigError(data.field_path("fraction"), "must be in (0, 1]")
    return DataConfig(
        policy=ExcitationPolicy(policy),
        samples=data.integer("samples", params.DEFAULT_STEPS, minimum=2),
        hold=data.integer("hold", 5, minimum=1),
        u_min=u_min,
        u_max=u_max,
        fraction=fraction,
    )

def _parse_training(section, seed, jobs):
    training = section.section("training", ("restarts", "max_iter", "tolerance"))
    return TrainingSettings(
        restarts=training.integer("restarts", params.TRAINING_RESTARTS, minimum=1),
        max_iter=training.integer("max_iter", params.TRAINING_MAX_ITER, minimum=1),
        tolerance=training.number("tolerance", params.TRAINING_TOLERANCE, positive=True),
        seed=seed,
        jobs=jobs,
    )

def _parse_mpc(section, task):
    mpc = section.section("mpc", (
        "horizon", "q_diag", "r_diag", "x_min", "x_max", "confidence", "tightening_mode", "variance_weight",
    ))
    task_spec = TASKS[task]
    q_diag = mpc.vector("q_diag", list(task_spec.q_diag), size=params.STATE_DIM)
    r_diag = mpc.vector("r_diag", list(task_spec.r_diag), size=params.CONTROL_DIM)
    for key, values in (("q_diag", q_diag), ("r_diag", r_diag)):
        if min(values) <= 0:
            raise ConfigError(mpc.field_path(key), "entries must be positive")
    x_bounds = {}
    for key, unbounded in (("x_min", -math.inf), ("x_max", math.inf)):
        values = mpc.vector(key, None, size=params.STATE_DIM, allow_infinite=True)
        x_bounds[key] = None if values is None else np.where(np.isnan(values), unbounded, values)
    confidence = mpc.number("confidence", params.CONFIDENCE)
    if confidence != params.CONFIDENCE:
        raise ConfigError(mpc.field_path("confidence"), f"only {params.CONFIDENCE} is supported")
    try:
        return MpcConfig(
            horizon=mpc.integer("horizon", params.DEFAULT_HORIZON, minimum=1),
            q_mat=np.diag(q_diag),
            r_mat=np.diag(r_diag),
            u_min=np.asarray(task_spec.u_min),
            u_max=np.asarray(task_spec.u_max),
            x_min=x_bounds["x_min"],
            x_max=x_bounds["x_max"],
            confidence=confidence,
            tightening_mode=TighteningMode(mpc.string(
                "tightening_mode", TighteningMode.PAPER_2SIGMA_VARIANCE.value, [item.value for item in TighteningMode]
            )),
            variance_weight=VarianceWeight(mpc.string(
                "variance_weight", VarianceWeight.TRACE.value, [item.value for item in VarianceWeight]
            )),
        )
    except ValueError as err:
        raise ConfigError("mpc", str(err)) from err

def _parse_sqp(section):
    sqp = section.section("sqp", ("max_iter", "tau1", "tau2", "tau", "radius_max", "stop_tol"))
    try:
        return SqpSettings(
            max_iter=sqp.integer("max_iter", params.SQP_MAX_ITER, minimum=1),
            tau1=sqp.number("tau1", params.SQP_TAU1, positive=True),
            tau2=sqp.number("tau2", params.SQP_TAU2, positive=True),
            tau=sqp.number("tau", params.SQP_TAU, positive=True),
            radius_max=sqp.number("radius_max", params.SQP_RADIUS_MAX, positive=True),
            stop_tol=sqp.number("stop_tol", params.SQP_STOP_TOL, positive=True),
        )
    except ValueError as err:
        raise ConfigError("sqp", str(err)) from err

def _parse_reference(section, task):
    ref = section.section("reference", ("kind", "levels", "switch_steps", "lorenz", "path"))
    kind = ref.string("kind", "step" if task == "step" else "lorenz", REFERENCE_KINDS)
    levels = ref.raw("levels", DEFAULT_STEP_LEVELS)
    try:
        levels = np.asarray(levels, dtype=float)
    except (TypeError, ValueError) as err:
        raise ConfigError(ref.field_path("levels"), "must be a list of [y1, y2] pairs") from err
    if levels.ndim != 2 or levels.shape[1] != len(params.OUTPUT_INDICES) or not np.all(np.isfinite(levels)):
        raise ConfigError(ref.field_path("levels"), "must be a list of [y1, y2] pairs")
    switches = ref.vector("switch_steps", list(DEFAULT_STEP_SWITCHES), size=levels.shape[0])
    if any(step != int(step) or step < 0 for step in switches) or list(switches) != sorted(set(switches)):
        raise ConfigError(ref.field_path("switch_steps"), "must be increasing non-negative integers")

    lorenz = ref.section("lorenz", ("sigma", "rho", "beta", "dt", "stride", "initial", "bands"))
    bands = lorenz.raw("bands", [list(band) for band in LorenzParams.bands])
    if not (isinstance(bands, list) and len(bands) == len(params.OUTPUT_INDICES)
            and all(isinstance(band, list) and len(band) == 2 and band[0] <= band[1] for band in bands)):
        raise ConfigError(lorenz.field_path("bands"), "must be one [low, high] pair per output")
    lorenz_params = LorenzParams(
        sigma=lorenz.number("sigma", LorenzParams.sigma),
        rho=lorenz.number("rho", LorenzParams.rho),
        beta=lorenz.number("beta", LorenzParams.beta),
        dt=lorenz.number("dt", LorenzParams.dt, positive=True),
        stride=lorenz.integer("stride", LorenzParams.stride, minimum=1),
        initial=lorenz.vector("initial", list(LorenzParams.initial), size=3),
        bands=tuple((float(low), float(high)) for low, high in bands),
    )
    path = ref.string("path") if kind == "csv" else None
    return ReferenceConfig(kind, tuple(map(tuple, levels)), tuple(int(step) for step in switches), lorenz_params, path)

TOP_LEVEL_KEYS = (
    "task", "controller", "output_dir", "model_path", "dataset_path", "seed", "steps", "trials", "jobs",
    "record_timing", "data", "training", "mpc", "sqp", "reference",
)

def parse_config(document):
    """RunConfig from a decoded JSON document"""
    root = _Section(document, "", TOP_LEVEL_KEYS)
    task = root.string("task", choices=tuple(TASKS))
    seed = root.integer("seed", 0, minimum=0)
    jobs = root.integer("jobs", 1, minimum=1)
    if seed >= 2 ** 64:
        raise ConfigError("seed", "must be an unsigned 64 bit integer")
    return RunConfig(
        task=task,
        controller=root.string("controller", "gpmpc2", CONTROLLERS),
        output_dir=root.string("output_dir"),
        model_path=root.string("model_path"),
        dataset_path=root.string("dataset_path"),
        seed=seed,
        steps=root.integer("steps", params.DEFAULT_STEPS, minimum=1),
        trials=root.integer("trials", params.DEFAULT_TRIALS, minimum=1),
        jobs=jobs,
        record_timing=root.boolean("record_timing", True),
        data=_parse_data(root, task),
        training=_parse_training(root, seed, jobs),
        mpc=_parse_mpc(root, task),
        sqp=_parse_sqp(root),
        reference=_parse_reference(root, task),
    )

def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as file:
            document = json.load(file)
    except FileNotFoundError as err:
        raise ConfigError("config", f"'{path}' does not exist") from err
    except json.JSONDecodeError as err:
        raise ConfigError("config", f"'{path}' is not valid JSON: {err}") from err
    return parse_config(document)
