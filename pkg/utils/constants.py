# Weak learner constants
GRID_SIZE = 128  # N_L; N_L - 1 = 127 candidate cuts per dimension
STOP_PRIOR = 0.5
MAX_DEPTH = 50
MIN_COUNT = 5
STRATEGIES = ("stochastic", "greedy")

# Boosting schedule
TREES_PER_MARGIN = 100
TREES_COPULA = 2500
EARLY_STOP_WINDOW = 50

# Numerical guards
THETA_CLAMP = 1e-12
MIN_CHILD_WIDTH = 1e-12

# Preprocessing
DEFAULT_MARGIN = 0.01

# Cross-validation grids used for the benchmark data sets
C0_GRID = (0.1, 0.2, 0.3)
GAMMA_GRID = tuple(round(0.1 * i, 1) for i in range(11))
CV_FOLDS = 10

# Monte-Carlo evaluation
MIN_MC_COUNT = 1000

# Model file
FORMAT_VERSION = 1

# Exit codes
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_MODEL = 4
