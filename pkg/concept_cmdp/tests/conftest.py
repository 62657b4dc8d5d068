"""Shared fixtures. The run ledger points at a throwaway sqlite file."""

import os
import tempfile
from pathlib import Path

_LEDGER_DIR = tempfile.mkdtemp(prefix="concept_cmdp_tests_")
os.environ["CONCEPT_CMDP_DATABASE_URL"] = f"sqlite:///{Path(_LEDGER_DIR) / 'runs.db'}"
os.environ.pop("CONCEPT_CMDP_THREADS", None)

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from config import CONFIGS_DIR  # noqa: E402
from schemas import GridSpec  # noqa: E402
from services.cmdp import (  # noqa: E402
    TabularCMDP, build_context_swap, build_contextual_gridworld, build_random_cmdp, build_rental_car,
)
from services.solver import solve  # noqa: E402


@pytest.fixture(scope="session")
def rental():
    return build_rental_car()


@pytest.fixture(scope="session")
def rental_solution(rental):
    return solve(rental)


@pytest.fixture(scope="session")
def swap():
    return build_context_swap()


@pytest.fixture(scope="session")
def swap_solution(swap):
    return solve(swap)


@pytest.fixture(scope="session")
def random_cmdp():
    return build_random_cmdp(6, 3, 2, 0.9, seed=11)


@pytest.fixture(scope="session")
def random_solution(random_cmdp):
    return solve(random_cmdp)


@pytest.fixture
def bandit():
    """One state, two actions, a single context paying (1, 0)."""
    return TabularCMDP(
        transitions=np.ones((1, 1, 2, 1)),
        rewards=np.array([[[1.0, 0.0]]]),
        p_context=np.ones(1),
        p_initial=np.ones((1, 1)),
        gamma=0.0,
    )


# ── Gridworlds ─────────────────────────────────────────────────────────

def _grid_from_config(name: str) -> TabularCMDP:
    return build_contextual_gridworld(GridSpec.model_validate_json((CONFIGS_DIR / name).read_text()))


@pytest.fixture(scope="session")
def maze_train():
    """Walled maze with plain/seek/avoid contexts."""
    return _grid_from_config("grid_train.json")


@pytest.fixture(scope="session")
def maze_test():
    """The same maze; the seek context becomes an exit one step before the target."""
    return _grid_from_config("grid_test.json")


@pytest.fixture(scope="session")
def open_grid():
    """5x5 field with seek and avoid contexts around a central target."""
    spec = GridSpec(layout=["S...S", ".....", "..T..", ".....", "S...S"], tasks=["seek", "avoid"], slip=0.1)
    return build_contextual_gridworld(spec)


@pytest.fixture(scope="session")
def open_grid_solution(open_grid):
    return solve(open_grid)


@pytest.fixture(scope="session")
def corridor():
    """Targets at both ends; seek and avoid want opposite moves beside each target."""
    return build_contextual_gridworld(GridSpec(layout=["T...T"], tasks=["seek", "avoid"], gamma=0.2))


@pytest.fixture(scope="session")
def corridor_solution(corridor):
    return solve(corridor)
