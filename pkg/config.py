import os

from dotenv import load_dotenv

# Values below can be overridden from the environment or a local .env file,
# e.g. STP_SEED=7 or STP_DEMAND_RATE=0.6
load_dotenv()


def _env_int(name, default):
    return int(os.getenv(f"STP_{name}", default))


def _env_float(name, default):
    return float(os.getenv(f"STP_{name}", default))


# --- Global ---
SEED = _env_int("SEED", 42)

# --- Road Network ---
GRID_ROWS = _env_int("GRID_ROWS", 5)
GRID_COLS = _env_int("GRID_COLS", 5)
SEGMENT_LENGTH_M = _env_float("SEGMENT_LENGTH_M", 150.0)
LANES = _env_int("LANES", 2)
SPEED_LIMIT_MPS = _env_float("SPEED_LIMIT_MPS", 13.89)  # 50 km/h urban limit
MIN_SEGMENT_LENGTH_M = 50.0
LANE_WIDTH_M = 3.5
PROFILE_BIN_S = 300  # 5-minute profile bins
PROFILE_RUNS = _env_int("PROFILE_RUNS", 5)  # base runs averaged into TTh

# Fixed-cycle two-phase signals at interior intersections
SIGNAL_GREEN_S = _env_int("SIGNAL_GREEN_S", 45)
SIGNAL_RED_S = _env_int("SIGNAL_RED_S", 45)

# --- Mobility ---
STEP_S = 1.0
HORIZON_S = _env_int("HORIZON_S", 7200)  # 6:00 to 8:00 am
DAY_START_S = 6 * 3600
VEHICLE_LENGTH_M = 5.0
MIN_GAP_M = 2.5
MAX_ACCEL = 2.6  # m/s^2
MAX_DECEL = 4.5  # m/s^2
REACTION_TIME_S = 1.0
DAWDLE_SIGMA = _env_float("DAWDLE_SIGMA", 0.2)
LANE_CHANGE_LOOKAHEAD_M = 60.0

# --- Demand ---
DEMAND_RATE = _env_float("DEMAND_RATE", 0.8)  # vehicles per second
SPECIAL_EVENT_RATE = _env_float("SPECIAL_EVENT_RATE", 0.25)
RECURRENT_MULTIPLIER = 1.5

# --- Events ---
WORKZONE_MIN_DURATION_S = 3600
# Blocker placement as a fraction of segment length
LANE_POSITION_FRACTION = {"beginning": 0.15, "middle": 0.5, "end": 0.85}

# --- VANET Channel ---
COMM_RANGE_M = _env_float("COMM_RANGE_M", 300.0)
BASE_LOSS = _env_float("BASE_LOSS", 0.05)
COLLISION_COEFFICIENT = _env_float("COLLISION_COEFFICIENT", 20.0)
BEACON_PERIOD_S = 0.1
COMM_TICKS_PER_STEP = 10
SCF_BUFFER_SIZE = 100
SCF_MAX_HOPS = 3
STALENESS_S = 900  # 15 minutes

# --- Vehicle Agent ---
TRAJECTORY_CAPACITY = 10
ALPHA = _env_float("ALPHA", 0.65)
CONGESTION_FACTOR = _env_float("CONGESTION_FACTOR", 1.8)

# --- RSU ---
FLOW_INTERVAL_S = 300
FLOW_HISTORY = 4
ADJACENT_COUNT = 8
EVENT_KINDS = ("accident", "workzone", "weather", "recurrent", "special_event", "none")
FEATURE_DIM = 1 + 1 + FLOW_HISTORY + ADJACENT_COUNT + ADJACENT_COUNT * len(EVENT_KINDS)

# --- Dataset ---
N_CLASSES = 4
TASKS = ("t5", "t15", "t20")
TASK_OFFSETS = {"t5": 1, "t15": 3, "t20": 4}  # in 5-minute samples
TEST_FRACTION = 0.2
FLOW_SCALE_PERCENTILE = 99.0

# --- Learner ---
HIDDEN_LAYERS = (20, 40, 20)
ANN_HIDDEN_UNITS = 90
ANN_EPOCHS = 150
EPOCHS = _env_int("EPOCHS", 100)
BATCH_SIZE = 32
LEARNING_RATE = _env_float("LEARNING_RATE", 0.5)
LEARNING_RATE_GRID = (0.01, 0.05, 0.1, 0.5)
DROPOUT_RATE = 0.2
MODEL_FORMAT_VERSION = 1
SEARCH_BUDGET = _env_int("SEARCH_BUDGET", 12)  # sampled grid points per search
SEARCH_REPEATS = 1
DEEP_EPOCH_GRID = tuple(range(50, 301, 50))
ANN_EPOCH_GRID = tuple(range(25, 251, 25))
UNIT_GRID = tuple(range(5, 151, 5))
DEEP_LAYER_COUNTS = (2, 3, 4, 5)

# --- Harness ---
N_FOLDS = _env_int("N_FOLDS", 5)
N_REPEATS = _env_int("N_REPEATS", 20)
SUITE_REPLICATES = _env_int("SUITE_REPLICATES", 3)
ARIMA_MAX_ORDER = 10
ARIMA_TASKS = ("t15",)
PAIRED_WIN_FRACTION = 0.7
C_FACTOR_GRID = tuple(round(1.0 + 0.1 * i, 1) for i in range(16))  # 1.0 .. 2.5
C_FACTOR_COVERAGE = 0.99
ALPHA_GRID = tuple(round(0.05 * i, 2) for i in range(21))  # 0.0 .. 1.0
ALPHA_EXPECTED_REGION = (0.6, 0.75)
DENSITY_SWEEP = (0.0001, 0.036)
DENSITY_LEVELS = 12
WORKERS = _env_int("WORKERS", 1)

# --- Log file paths ---
LOGS_DIR = os.getenv("STP_LOGS_DIR", "logs")
APPLICATION_LOG = os.path.join(LOGS_DIR, "application.log")
SIMULATION_LOG = os.path.join(LOGS_DIR, "simulation.log")
TRAINING_LOG = os.path.join(LOGS_DIR, "training.log")

# Create logs directory if it doesn't exist
os.makedirs(LOGS_DIR, exist_ok=True)
