# Defaults and constants for the massl package.
import os

THIS_DIR = os.path.abspath(os.path.dirname(__file__))

# Global for logfile if not set.
MASSL_LOG_FILE = os.path.join(THIS_DIR, "massl.log")

# Default log level.
DEFAULT_LOG_LEVEL = "INFO"

# Environment variable capping worker threads.
THREADS_ENV_VAR = "MASSL_THREADS"

# Numerical tolerances.
NORM_EPS = 1e-12
UNIT_NORM_TOL = 1e-6

# Synthetic data (desk scale): 10-class blobs in 32 dimensions.
DEF_NUM_CLASSES = 10
DEF_PER_CLASS = 500
DEF_INPUT_DIM = 32
DEF_SEPARATION = 4.0
DEF_NOISE = 1.0
DEF_DATA_SEED = 0
DEF_TEST_FRACTION = 0.2

# Architecture: backbone input -> 128 -> 128, head 128 -> 128 -> 128 -> D.
DEF_BACKBONE_WIDTHS = (128, 128)
DEF_HEAD_HIDDEN = 128
DEF_OUT_DIM = 32
# Full-scale head: 2048-d hidden, 256-d output.
FULL_SCALE_HEAD_HIDDEN = 2048
FULL_SCALE_OUT_DIM = 256

# Memory.
DEF_MEMORY_SIZE = 1024
DEF_BLOCK_SIZE = 256
DEF_SAMPLING = "stochastic"
DEF_ENQUEUE_POLICY = "one-global"
FULL_SCALE_MEMORY_SIZE = 65536
FULL_SCALE_BLOCK_SIZE = 16384

# Temperatures.
DEF_TAU_S = 0.1
DEF_TAU_T_START = 0.04
DEF_TAU_T_END = 0.07
DEF_TAU_T_WARMUP_EPOCHS = 30

# Views: 2 global + 4 local at desk scale (full scale: 2 + 10).
DEF_N_GLOBAL = 2
DEF_N_LOCAL = 4
FULL_SCALE_N_LOCAL = 10
DEF_GLOBAL_NOISE = 0.1
DEF_GLOBAL_DROPOUT = 0.1
DEF_GLOBAL_SCALE_JITTER = 0.2
DEF_LOCAL_NOISE = 0.2
DEF_LOCAL_DROPOUT = 0.4
DEF_LOCAL_SCALE_JITTER = 0.4

# Optimizer and schedules.
DEF_LR = 1e-3
DEF_LR_END = 1e-6
FULL_SCALE_LR = 1e-5
DEF_WD_START = 0.04
DEF_WD_END = 0.4
DEF_BETA1 = 0.9
DEF_BETA2 = 0.999
DEF_ADAM_EPS = 1e-8

# EMA momentum: cosine from start to end over training.
DEF_MOMENTUM_START = 0.996
DEF_MOMENTUM_END = 1.0

# Training loop.
DEF_EPOCHS = 200
DEF_BATCH_SIZE = 128
FULL_SCALE_BATCH_SIZE = 1024
DEF_SEED = 0
DEF_LOG_INTERVAL = 10
DEF_CHECKPOINT_INTERVAL = 0
DEF_OUT_DIR = "runs"

# Evaluation.
DEF_KNN_KS = (10, 20, 100, 200)
DEF_KNN_TEMPERATURE = 0.07
DEF_LINEAR_EPOCHS = 100
DEF_LINEAR_LR = 0.1
DEF_LINEAR_BATCH_SIZE = 256
DEF_LINEAR_SWEEP_LRS = (0.01, 0.03, 0.1, 0.3, 1.0)
DEF_LOW_SHOTS = (1, 2, 4)
DEF_LOW_SHOT_REPEATS = 5
DEF_EVAL_ENCODER = "teacher"
DEF_EVAL_FEATURES = "projection"
KMEANS_RESTARTS = 10
KMEANS_MAX_ITER = 300

# Collapse thresholds.
COLLAPSE_STD_THRESHOLD = 0.01
COLLAPSE_ENTROPY_RATIO_THRESHOLD = 0.1

# Ablation sweeps.
DEF_ABLATION_SEEDS = 3
ABLATION_KNN_K = 20
MEMORY_SWEEP_VALUES = (64, 128, 256, 512, 1024, 2048)
# The memory sweep holds N_b and the batch fixed so that every K is valid.
MEMORY_SWEEP_BLOCK_SIZE = 64
MEMORY_SWEEP_BATCH_SIZE = 64
BLOCK_SWEEP_VALUES = (32, 64, 128, 256, 512)
SAMPLING_SWEEP_VALUES = (DEF_BLOCK_SIZE,)
SWEEPS = ("memory-size", "block-size", "sampling")

# Acceptance thresholds for the desk runs.
PILOT_KNN_THRESHOLD = 0.85
PILOT_COLLAPSE_GAP = 0.20
PILOT_MEMORY_TOLERANCE = 0.01

# Checkpoint format.
CHECKPOINT_MAGIC = b"MSSL"
CHECKPOINT_VERSION = 1
