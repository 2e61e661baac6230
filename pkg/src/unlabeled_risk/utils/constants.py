import math

LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)

# Tolerances
PRIOR_SUM_TOLERANCE = 1e-12
FISHER_SYMMETRY_TOLERANCE = 1e-9  # relative
FISHER_PSD_TOLERANCE = 1e-8  # relative to the largest eigenvalue
MAX_CONDITION_NUMBER = 1e12

# Mixture fit defaults
DEFAULT_MAX_ITERATIONS = 500
DEFAULT_LOGLIK_REL_TOLERANCE = 1e-9
DEFAULT_RESTARTS = 5
DEFAULT_VARIANCE_FLOOR_FACTOR = 1e-8
RESTART_PERTURBATION_SCALE = 0.5  # times the pooled std
MIN_FIT_SAMPLES = 4
POLISH_MAX_STEPS = 50
POLISH_TOLERANCE = 1e-10  # parameter change in units of sigma (means) or sigma^2 (variances)
POLISH_LOGLIK_SLACK = 1e-12  # relative
NEWTON_MAX_STEP = 0.5  # same units
NEWTON_EIGEN_RATIO = 1e-12

# Quadrature
GAUSS_HERMITE_NODES = 64
LOG_LOSS_GH_AGREEMENT = 1e-9
LOG_LOSS_SIMPSON_HALF_WIDTH = 10.0  # in sigmas
LOG_LOSS_SIMPSON_TOLERANCE = 1e-10
MOMENT_HALF_WIDTH = 12.0  # in sigmas
MOMENT_SIMPSON_TOLERANCE = 1e-10
MOMENT_CONVERGENCE_LIMIT = 1e-6
SIMPSON_MIN_INTERVALS = 2**8
SIMPSON_MAX_INTERVALS = 2**20

# Delta method
DELTA_RELATIVE_STEP = 1e-5

# Training defaults
DEFAULT_STEP_SIZE = 0.5
DEFAULT_FD_RELATIVE_STEP = 1e-4
DEFAULT_FD_MIN_STEP = 1e-4
DEFAULT_TRAIN_MAX_ITERATIONS = 200
DEFAULT_TRAIN_TOLERANCE = 1e-7
STALL_PATIENCE = 10
DEGENERATE_PERTURBATION_SCALE = 1e-3
DEGENERATE_RETRIES = 5
INIT_LOW, INIT_HIGH = -2.0, 2.0

DEFAULT_GRID_POINTS = 17
DEFAULT_GRID_WINDOW = 2.0
DEFAULT_GRID_SHRINK = 0.5
DEFAULT_GRID_MAX_SWEEPS = 50
MIN_GRID_WINDOW = 1e-3
LITERAL_WINDOW_FACTOR = 4

DEFAULT_SUPERVISED_STEP = 1.0
DEFAULT_SUPERVISED_MAX_ITERATIONS = 10_000
DEFAULT_SUPERVISED_TOLERANCE = 1e-10
MAX_STEP_HALVINGS = 5

# Synthetic data
CALIBRATION_SAMPLES = 100_000
CALIBRATION_ITERATIONS = 40
CALIBRATION_BRACKET = (0.0, 4.0)
CALIBRATION_TOLERANCE = 0.005
CALIBRATION_SEED_OFFSET = 7919

# Diagnostics
MIN_NORMALITY_SAMPLES = 20
MIN_HISTOGRAM_BINS = 5

# Output
FLOAT_FORMAT = "%.17g"
THREADS_ENV_VAR = "UNLABELED_RISK_THREADS"
