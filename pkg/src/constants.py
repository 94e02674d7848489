"""Application-wide constants"""

# ── Training protocol ──
NESTEROV_MOMENTUM = 0.9
BATCH_SIZE = 128
EMA_DECAYS = [0.968, 0.984, 0.992, 0.996, 0.998]
EMA_SAMPLING_PERIOD = 16
EMA_WARMUP_OFFSET = 10          # min(alpha, (t + 1) / (t + 10))
TRAIN_SPLIT = 0.8
WEIGHT_DECAY_RESNET = 1e-4
STEP_FACTOR = 0.2
ECE_BINS = 100
BOOTSTRAP_DECAY = 0.992

# ── Linear evaluation ──
LINEAR_EVAL_EPOCHS = 50
LINEAR_EVAL_LR = 0.01

# ── Batch normalization ──
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1

# ── SWA ──
SWA_START_FRACTION = 0.75

# ── Temperature scaling ──
TEMPERATURE_MIN = 0.05
TEMPERATURE_MAX = 20.0
TEMPERATURE_TOL = 1e-4

# ── Numerics ──
PROB_FLOOR = 1e-12
DIVERGENCE_NORM = 1e8
GRAD_CHECK_STEP = 1e-5
GRAD_CHECK_FLOOR = 1e-5
STOPPING_FRACTION_WARN = 0.75

# ── Desk-scale defaults ──
DEFAULT_FEATURES = 20
DEFAULT_CLASSES = 5
DEFAULT_TRAIN_SAMPLES = 10_000
DEFAULT_TEST_SAMPLES = 2_000
DEFAULT_HIDDEN = [128, 128]
DEFAULT_EPOCHS = 60
DEFAULT_WARMUP_EPOCHS = 3
DEFAULT_LR = 0.1

# ── Files ──
CHECKPOINT_FORMAT_VERSION = 1
RECORD_FILENAME = "record.jsonl"
CONFIG_FILENAME = "config.toml"
LOG_FILENAME = "emabench.log"
REPORT_SUBDIR = "report"
CONFIGS_SUBDIR = "configs"
DEFAULT_DATA_DIR = "data"
DEFAULT_OUT_DIR = "runs"
THREADS_ENV = "EMABENCH_THREADS"

# ── Exit codes ──
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_FAILED_RUN = 4
