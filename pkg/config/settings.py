"""
Configuration settings for dpbayes (differentially private posterior sampling)
"""
import os
from dotenv import load_dotenv

load_dotenv()

# Logging
LOG_LEVEL = os.getenv("DPBAYES_LOG_LEVEL", "INFO").upper()

# Reproducibility
DEFAULT_SEED = int(os.getenv("DPBAYES_SEED", "0"))

# Privacy defaults
DEFAULT_DELTA = float(os.getenv("DPBAYES_DELTA", "1e-4"))

# Output location for relative paths given on the command line
OUTPUT_DIR = os.getenv("DPBAYES_OUTPUT_DIR", ".")

# Benchmark protocol (train/test split and repetitions are not fixed by the experiments)
TRAIN_FRACTION = float(os.getenv("DPBAYES_TRAIN_FRACTION", "0.8"))
BENCH_SEEDS = int(os.getenv("DPBAYES_BENCH_SEEDS", "20"))
BENCH_WORKERS = int(os.getenv("DPBAYES_BENCH_WORKERS", "1"))
BENCH_METHODS = ["ops", "hybrid", "objpert", "non_private_erm"]

# One-posterior-sample chains
OPS_CHAIN_LENGTH = int(os.getenv("DPBAYES_OPS_CHAIN_LENGTH", "2000"))
OPS_BURN_IN_FRACTION = 0.5
OPS_MH_MAX_DIM = 10          # above this the SGNHT backend is used
OPS_PILOT_LENGTH = 200
OPS_SCALE_FACTOR = 2.38

# Stochastic-gradient samplers
DEFAULT_PASSES = 50
DEFAULT_BURN_IN_FRACTION = 0.5
DIVERGENCE_THRESHOLD = 1e6
SGFS_RIDGE = 1e-10

# Numerical checks
FD_STEP_FACTOR = 1e-6
BATCH_MEANS_BATCHES = 30
MIN_TRACE_LENGTH = 1000

# Baselines
ERM_TOLERANCE = 1e-8
ERM_MAX_ITER = 10_000
DEFAULT_LAMBDA_REG = 1.0

# Data preprocessing
DEFAULT_NORM_BOUND = 1.0
ABALONE_BINARIZE = "median"

# Two-normals generator defaults (synthetic classification of two normals)
SYNTHETIC_DEFAULTS = {
    "n": 2000,
    "dim": 2,
    "separation": 4.0,
}

# Verify suite sizing (desk scale)
VERIFY_DP_RATIO_TRIALS = 10_000
VERIFY_COV_TRIALS = 10_000
VERIFY_ARE_REPLICATES = 2000
