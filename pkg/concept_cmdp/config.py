"""Application configuration."""

import os
from pathlib import Path

BASE_DIR = Path(__file__).resolve().parent
PROJECT_DIR = BASE_DIR.parent
CONFIGS_DIR = PROJECT_DIR / "configs"

# ── Run ledger ─────────────────────────────────────────────────────────
DATABASE_URL = os.getenv(
    "CONCEPT_CMDP_DATABASE_URL", f"sqlite:///{Path.cwd() / 'concept_runs.db'}"
)

# ── Logging ────────────────────────────────────────────────────────────
LOG_LEVEL = os.getenv("CONCEPT_CMDP_LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"

# ── Workers ────────────────────────────────────────────────────────────
THREADS_ENV = "CONCEPT_CMDP_THREADS"
DEFAULT_THREADS = 1


def resolve_threads(flag_value: int | None) -> int:
    """Worker count: the environment variable wins over the --threads flag."""
    env_value = os.getenv(THREADS_ENV)
    if env_value:
        try:
            return max(1, int(env_value))
        except ValueError:
            pass
    return max(1, flag_value or DEFAULT_THREADS)


# ── File schema versions ───────────────────────────────────────────────
CMDP_VERSION = 1
CLASSIFIER_VERSION = 1

# ── Numerical tolerances ───────────────────────────────────────────────
PROB_TOL = 1e-9                 # row sums of transition/policy tables
OCCUPANCY_TOL = 1e-8
SOLVER_TOL = 1e-10              # sup-norm Bellman residual
SOLVER_MAX_ITERS = 100_000
MAX_DENSE_STATES = 5_000        # dense LU limit
BOUND_MARGIN_TOL = 1e-7

# ── Episodes ───────────────────────────────────────────────────────────
TRUNCATION_TOL = 1e-6           # default horizon: smallest T with gamma^T < tol
MAX_HORIZON = 10_000

# ── Softening of the optimal policy ────────────────────────────────────
SOFTEN_TAU_SCALE = 0.05         # tau = 0.05 * ||r||_inf
MIN_LOG_PROB = -700.0           # keeps softened rows full support

# ── Concept learning ───────────────────────────────────────────────────
LOGIT_CLIP = 30.0
EXHAUSTIVE_LIMIT = 10**7
EXHAUSTIVE_BATCH = 4096

# ── Default grid (desk-scale analogue of the locomotion tasks) ─────────
DEFAULT_GRID_LAYOUT = [
    "S...S",
    ".....",
    "..T..",
    ".....",
    "S...S",
]
DEFAULT_GRID_TASKS = ["plain", "seek", "avoid"]
