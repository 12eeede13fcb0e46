"""Common Parameters"""

import numpy as np

STATE_DIM : int = 4
CONTROL_DIM : int = 2
OUTPUT_INDICES = (0, 2)

DEFAULT_STEPS : int = 189
DEFAULT_TRIALS : int = 50
DEFAULT_HORIZON : int = 10
MAX_FAILED_TRIAL_FRACTION = 0.1

# Gram factorization
JITTER_START = 1e-10
JITTER_MAX = 1e-6
JITTER_GROWTH = 10.0

# Hyperparameter training
TRAINING_RESTARTS : int = 5
TRAINING_MAX_ITER : int = 200
TRAINING_TOLERANCE = 1e-9
LOG_SIGNAL_SPAN = 10.0 # around log(target variance)
LOG_NOISE_MAX = 2.0 # above log(target variance)
# Noise floor and soft cap on the signal to noise ratio σs/σn
NOISE_SNR_FLOOR = 50.0 # against the target standard deviation
NOISE_SNR_MAX = 1000.0
NOISE_SNR_PENALTY_POWER : int = 30
LOG_SCALE_SPAN = 12.0 # around -log(input variance)

# Covariance repair
PSD_SYMMETRY_TOL = 1e-10
PSD_CLAMP_TOL = 1e-6

# Extended state square root
SQRT_EIGEN_FLOOR = 1e-6
SQRT_EIGEN_FLOOR_CAP = 1e-2

FINITE_DIFF_STEP = 1e-5

# Active set QP
QP_FEASIBILITY_TOL = 1e-10
QP_MULTIPLIER_TOL = 1e-9
QP_RANK_TOL = 1e-10
QP_ITERATION_FACTOR : int = 50

# FP-SQP
SQP_TAU1 = 0.1
SQP_TAU2 = 0.75
SQP_TAU = 1.0
SQP_MAX_ITER : int = 100
SQP_RADIUS_MAX = 10.0
SQP_RADIUS_MIN = 1e-14
SQP_STOP_TOL = 1e-10
SQP_NONLINEAR_TOL = 1e-8
BFGS_CURVATURE_TOL = 1e-8

# Chance constraints, fixed confidence with a factor of two
CONFIDENCE = 0.95
TIGHTENING_FACTOR = 2.0

LYAPUNOV_TOL = 1e-8
CONTROL_CLAMP_TOL = 1e-9

# Monte-Carlo oracle
MC_CHUNK_SIZE : int = 50_000

# Oracle suites of the validate command
VALIDATE_MC_SAMPLES : int = 1_000_000
VALIDATE_MC_CASES : int = 20
VALIDATE_MC_TOL = 4.0 # standard errors
VALIDATE_QP_PROBLEMS : int = 100
VALIDATE_QP_MAX_VARS : int = 6
VALIDATE_QP_MAX_CONSTRAINTS : int = 10
VALIDATE_QP_TOL = 1e-6

# Artefacts
MODEL_FORMAT_VERSION : int = 1
DATABASE_NAME = "results.db"
METRICS_NAME = "metrics.json"
REFERENCE_NAME = "reference.csv"
COMPARISON_NAME = "comparison.csv"
VALIDATION_NAME = "validation.json"
REPORT_SUFFIX = ".report.json"
TRIAL_NAME_FORMAT = "trial_{:03d}.csv"
CSV_FLOAT_FORMAT = "%.12g"

# Seed derivation keys, SeedSequence(master, spawn_key=(KEY, index))
SEED_KEY_DATA : int = 0
SEED_KEY_TRAINING : int = 1
SEED_KEY_TRIAL : int = 2
SEED_KEY_VALIDATE : int = 3

def derive_rng(master_seed, *key):
    """Counter based generator for a (master seed, key) pair"""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(key)))
