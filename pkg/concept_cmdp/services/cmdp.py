"""
Finite contextual MDPs: definition, validation, sampling, builders and the
environment file codec.

Tables are indexed (context, state, action[, next_state]). Rewards follow
r(s, a, c); they never depend on the next state.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from config import PROB_TOL, TRUNCATION_TOL, MAX_HORIZON
from errors import InvalidInputError
from schemas import EnvironmentFile, EnvironmentLabels, GridSpec
from services.rng import Stream, make_rng, draw_from_cdf

logger = logging.getLogger(__name__)


def _frozen(array, dtype=float) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


# ── Types ──────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class TabularCMDP:
    transitions: np.ndarray          # (C, S, A, S)
    rewards: np.ndarray              # (C, S, A)
    p_context: np.ndarray            # (C,)
    p_initial: np.ndarray            # (C, S)
    gamma: float
    state_labels: Optional[tuple[str, ...]] = None
    action_labels: Optional[tuple[str, ...]] = None
    context_labels: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "transitions", _frozen(self.transitions))
        object.__setattr__(self, "rewards", _frozen(self.rewards))
        object.__setattr__(self, "p_context", _frozen(self.p_context))
        object.__setattr__(self, "p_initial", _frozen(self.p_initial))
        object.__setattr__(self, "gamma", float(self.gamma))

        if self.transitions.ndim != 4:
            raise InvalidInputError("transitions must be indexed (context, state, action, next_state)")
        n_c, n_s, n_a, n_next = self.transitions.shape
        if n_next != n_s:
            raise InvalidInputError(f"transitions: next-state axis has {n_next} entries, expected {n_s}")
        if self.rewards.shape != (n_c, n_s, n_a):
            raise InvalidInputError(f"rewards: shape {self.rewards.shape}, expected {(n_c, n_s, n_a)}")
        if self.p_context.shape != (n_c,):
            raise InvalidInputError(f"p_context: shape {self.p_context.shape}, expected {(n_c,)}")
        if self.p_initial.shape != (n_c, n_s):
            raise InvalidInputError(f"p_initial: shape {self.p_initial.shape}, expected {(n_c, n_s)}")
        for name, labels, size in (
            ("state_labels", self.state_labels, n_s),
            ("action_labels", self.action_labels, n_a),
            ("context_labels", self.context_labels, n_c),
        ):
            if labels is not None:
                if len(labels) != size:
                    raise InvalidInputError(f"{name}: {len(labels)} names for {size} entries")
                object.__setattr__(self, name, tuple(labels))

    @property
    def n_contexts(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[2]

    @property
    def reward_sup(self) -> float:
        return float(np.max(np.abs(self.rewards))) if self.rewards.size else 0.0

    def shape(self) -> tuple[int, int, int]:
        return self.n_states, self.n_actions, self.n_contexts

    def restrict_contexts(self, contexts: Sequence[int]) -> "TabularCMDP":
        """Sub-CMDP over the given contexts, p_context renormalized."""
        idx = list(contexts)
        p_c = self.p_context[idx]
        return TabularCMDP(
            transitions=self.transitions[idx],
            rewards=self.rewards[idx],
            p_context=p_c / p_c.sum(),
            p_initial=self.p_initial[idx],
            gamma=self.gamma,
            state_labels=self.state_labels,
            action_labels=self.action_labels,
            context_labels=None if self.context_labels is None else tuple(self.context_labels[i] for i in idx),
        )


@dataclass(frozen=True, eq=False)
class Policy:
    probs: np.ndarray                # (C, S, A)

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 3:
            raise InvalidInputError("policy must be indexed (context, state, action)")
        if np.any(probs < 0) or not np.all(np.abs(probs.sum(axis=-1) - 1.0) <= PROB_TOL):
            raise InvalidInputError("policy rows must be non-negative and sum to 1")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, n_contexts: int, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_contexts, n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions: np.ndarray, n_actions: int) -> "Policy":
        """One-hot policy from an action table indexed (context, state)."""
        return cls(np.eye(n_actions)[np.asarray(actions, dtype=int)])


class Step(NamedTuple):
    state: int
    action: int
    reward: float
    next_state: int


@dataclass(frozen=True)
class Trajectory:
    context: int
    steps: tuple[Step, ...]
    seed: int

    def __len__(self) -> int:
        return len(self.steps)

    def discounted_return(self, gamma: float) -> float:
        total, discount = 0.0, 1.0
        for step in self.steps:
            total += discount * step.reward
            discount *= gamma
        return total

    def observe(self, assignment: np.ndarray) -> "Trajectory":
        """Same trajectory with states replaced by their concept indices."""
        return Trajectory(
            context=self.context,
            steps=tuple(
                Step(int(assignment[s.state]), s.action, s.reward, int(assignment[s.next_state]))
                for s in self.steps
            ),
            seed=self.seed,
        )


@dataclass(frozen=True)
class Violation:
    kind: str
    index: tuple[int, ...]
    magnitude: float
    message: str


# ── Validation ─────────────────────────────────────────────────────────

def validate(cmdp: TabularCMDP) -> list[Violation]:
    """Every invariant breach of ``cmdp``; empty when the CMDP is well formed."""
    violations: list[Violation] = []

    if not 0.0 <= cmdp.gamma < 1.0:
        message = "discount not < 1" if cmdp.gamma >= 1.0 else "discount negative"
        violations.append(Violation("gamma", (), cmdp.gamma, message))

    row_min = cmdp.transitions.min(axis=-1)
    row_sum = cmdp.transitions.sum(axis=-1)
    for idx in zip(*np.nonzero(row_min < 0)):
        idx = tuple(int(i) for i in idx)
        violations.append(Violation(
            "transition_negative", idx, float(row_min[idx]),
            f"transition row {idx} has negative entry {row_min[idx]:.6g}",
        ))
    bad_sum = ~(np.abs(row_sum - 1.0) <= PROB_TOL)
    for idx in zip(*np.nonzero(bad_sum)):
        idx = tuple(int(i) for i in idx)
        deficit = 1.0 - float(row_sum[idx])
        violations.append(Violation(
            "transition_sum", idx, deficit,
            f"transition row {idx} sums to {row_sum[idx]:.12g} (deficit {deficit:.6g})",
        ))

    if np.any(cmdp.p_context < 0) or not abs(cmdp.p_context.sum() - 1.0) <= PROB_TOL:
        deficit = 1.0 - float(cmdp.p_context.sum())
        violations.append(Violation(
            "p_context", (), deficit, f"p_context sums to {cmdp.p_context.sum():.12g} or has negative entries",
        ))
    for c in range(cmdp.n_contexts):
        row = cmdp.p_initial[c]
        if np.any(row < 0) or not abs(row.sum() - 1.0) <= PROB_TOL:
            deficit = 1.0 - float(row.sum())
            violations.append(Violation(
                "p_initial", (c,), deficit, f"p_initial[{c}] sums to {row.sum():.12g} or has negative entries",
            ))

    for idx in zip(*np.nonzero(~np.isfinite(cmdp.rewards))):
        idx = tuple(int(i) for i in idx)
        violations.append(Violation(
            "reward_not_finite", idx, float("nan"), f"reward {idx} is not finite",
        ))
    return violations


def ensure_valid(cmdp: TabularCMDP) -> TabularCMDP:
    violations = validate(cmdp)
    if violations:
        listing = "; ".join(v.message for v in violations[:20])
        raise InvalidInputError(f"{len(violations)} CMDP violation(s): {listing}")
    return cmdp


# ── Sampling ───────────────────────────────────────────────────────────

def default_horizon(gamma: float, tol: float = TRUNCATION_TOL, cap: int = MAX_HORIZON) -> int:
    """Smallest T with gamma**T < tol, capped."""
    if gamma <= 0.0:
        return 1
    horizon = max(1, int(math.floor(math.log(tol) / math.log(gamma))) + 1)
    while gamma ** horizon >= tol:
        horizon += 1
    while horizon > 1 and gamma ** (horizon - 1) < tol:
        horizon -= 1
    return min(horizon, cap)


def sample_episode(
    cmdp: TabularCMDP,
    policy: Policy,
    context: int,
    seed: int,
    horizon: Optional[int] = None,
    geometric: bool = False,
) -> Trajectory:
    """
    Roll out ``policy`` in ``context``. Fixed horizon by default; with
    ``geometric`` the episode also stops after each step with probability
    1 - gamma, which makes visit counts consistent with the occupancy measure.
    """
    if not 0 <= context < cmdp.n_contexts:
        raise InvalidInputError(f"context {context} out of range [0, {cmdp.n_contexts})")
    horizon = default_horizon(cmdp.gamma) if horizon is None else int(horizon)
    if horizon < 1:
        raise InvalidInputError("horizon must be >= 1")

    rng = make_rng(seed, Stream.EPISODE)
    initial_cdf = np.cumsum(cmdp.p_initial[context])
    policy_cdf = np.cumsum(policy.probs[context], axis=-1)
    transition_cdf = np.cumsum(cmdp.transitions[context], axis=-1)
    rewards = cmdp.rewards[context]

    state = draw_from_cdf(initial_cdf, rng.random())
    uniforms = rng.random((horizon, 3))
    steps = []
    for t in range(horizon):
        action = draw_from_cdf(policy_cdf[state], uniforms[t, 0])
        next_state = draw_from_cdf(transition_cdf[state, action], uniforms[t, 1])
        steps.append(Step(state, action, float(rewards[state, action]), next_state))
        state = next_state
        if geometric and uniforms[t, 2] >= cmdp.gamma:
            break
    return Trajectory(context=context, steps=tuple(steps), seed=int(seed))


# ── Builders ───────────────────────────────────────────────────────────

RENTAL_STATES = ("electric_1", "electric_2", "combustion_1", "combustion_2")
RENTAL_ACTIONS = ("route_a1", "route_a2")
RENTAL_CONTEXTS = ("c1", "c2")
ELECTRIC = (0, 1)
COMBUSTION = (2, 3)


def build_rental_car(
    reward_long_route: float = 0.5,
    reward_short_route: float = 1.0,
    contexts: Sequence[str] = RENTAL_CONTEXTS,
) -> TabularCMDP:
    """
    One-shot route choice for four rental cars.

    In city c1 the short route a1 is better for every car. In city c2 the
    trip needs a stop: electric cars do better on a2 (charging point),
    combustion cars on a1 (fuel station).
    """
    if not reward_short_route > reward_long_route:
        raise InvalidInputError("reward_short_route must exceed reward_long_route")
    unknown = [c for c in contexts if c not in RENTAL_CONTEXTS]
    if unknown or not contexts:
        raise InvalidInputError(f"contexts must be a non-empty subset of {RENTAL_CONTEXTS}, got {list(contexts)}")

    short, long_ = reward_short_route, reward_long_route
    per_city = {
        "c1": [[short, long_]] * 4,
        "c2": [[long_, short]] * 2 + [[short, long_]] * 2,
    }
    n_c = len(contexts)
    rewards = np.array([per_city[c] for c in contexts], dtype=float)
    transitions = np.full((n_c, 4, 2, 4), 0.25)       # next rental is any car
    return ensure_valid(TabularCMDP(
        transitions=transitions,
        rewards=rewards,
        p_context=np.full(n_c, 1.0 / n_c),
        p_initial=np.full((n_c, 4), 0.25),
        gamma=0.0,
        state_labels=RENTAL_STATES,
        action_labels=RENTAL_ACTIONS,
        context_labels=tuple(contexts),
    ))


def build_context_swap(reward_high: float = 1.0, reward_low: float = 0.0) -> TabularCMDP:
    """
    Two states whose best actions swap between two contexts.

    Mixing contexts makes both states look alike, so a context-free
    abstraction merges them while the context-conditioned one keeps them apart.
    """
    if not reward_high > reward_low:
        raise InvalidInputError("reward_high must exceed reward_low")
    hi, lo = reward_high, reward_low
    rewards = np.array([
        [[hi, lo], [lo, hi]],
        [[lo, hi], [hi, lo]],
    ])
    return ensure_valid(TabularCMDP(
        transitions=np.full((2, 2, 2, 2), 0.5),
        rewards=rewards,
        p_context=np.array([0.5, 0.5]),
        p_initial=np.full((2, 2), 0.5),
        gamma=0.0,
        state_labels=("x", "y"),
        action_labels=("a0", "a1"),
        context_labels=("c1", "c2"),
    ))


GRID_ACTIONS = ("up", "down", "left", "right")
_MOVES = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}
_GRID_CHARS = set(".#STE")


@dataclass(frozen=True)
class GridIndex:
    """Mapping between grid cells, target signatures and state indices."""
    cells: tuple[tuple[int, int], ...]
    signatures: tuple[str, ...]
    targets: frozenset = field(default_factory=frozenset)
    exits: frozenset = field(default_factory=frozenset)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def state(self, cell: tuple[int, int], signature: str = "present") -> int:
        return self.signatures.index(signature) * self.n_cells + self.cells.index(cell)

    def decode(self, state: int) -> tuple[tuple[int, int], str]:
        return self.cells[state % self.n_cells], self.signatures[state // self.n_cells]


def grid_index(spec: GridSpec) -> GridIndex:
    layout = spec.layout
    width = len(layout[0])
    if width == 0 or any(len(row) != width for row in layout):
        raise InvalidInputError("malformed layout: rows must be non-empty and equally long")
    bad = {ch for row in layout for ch in row} - _GRID_CHARS
    if bad:
        raise InvalidInputError(f"malformed layout: unknown characters {sorted(bad)}")
    cells = tuple((r, c) for r, row in enumerate(layout) for c, ch in enumerate(row) if ch != "#")
    if not cells:
        raise InvalidInputError("malformed layout: no free cells")
    targets = frozenset(cell for cell in cells if layout[cell[0]][cell[1]] == "T")
    exits = frozenset(cell for cell in cells if layout[cell[0]][cell[1]] == "E")
    signatures = ("present", "consumed") if targets else ("present",)
    return GridIndex(cells=cells, signatures=signatures, targets=targets, exits=exits)


def build_contextual_gridworld(spec: GridSpec) -> TabularCMDP:
    """
    Grid navigation with one context per task.

    States are cell x target-status. A present target is consumed when the
    agent occupies it. Tasks: ``plain`` pays ``move_reward`` for every move
    that changes cell; ``seek``/``avoid`` add +/- ``target_reward`` for
    occupying a present target; ``exit`` pays ``exit_reward`` on the exit
    cell and restarts from the start cells.
    """
    index = grid_index(spec)
    layout = spec.layout
    n_cells, n_sig = index.n_cells, len(index.signatures)
    n_s, n_a, n_c = n_cells * n_sig, len(GRID_ACTIONS), len(spec.tasks)
    cell_pos = {cell: i for i, cell in enumerate(index.cells)}

    starts = [cell for cell in index.cells if layout[cell[0]][cell[1]] == "S"]
    if not starts:
        starts = [cell for cell in index.cells if cell not in index.targets and cell not in index.exits]
    if not starts:
        raise InvalidInputError("malformed layout: no start cells")
    p_start = np.zeros(n_s)
    for cell in starts:
        p_start[cell_pos[cell]] = 1.0 / len(starts)  # signature "present" occupies the first block

    def destination(cell, action):
        dr, dc = _MOVES[action]
        target = (cell[0] + dr, cell[1] + dc)
        return target if target in cell_pos else cell

    transitions = np.zeros((n_c, n_s, n_a, n_s))
    rewards = np.zeros((n_c, n_s, n_a))
    for c, task in enumerate(spec.tasks):
        for s in range(n_s):
            cell, sig = index.decode(s)
            on_target = sig == "present" and cell in index.targets
            next_sig = "consumed" if on_target else sig
            for a, action in enumerate(GRID_ACTIONS):
                if task == "exit" and cell in index.exits:
                    transitions[c, s, a] = p_start
                    rewards[c, s, a] = spec.exit_reward
                    continue
                dest = destination(cell, action)
                transitions[c, s, a, index.state(dest, next_sig)] += 1.0 - spec.slip
                transitions[c, s, a, index.state(cell, next_sig)] += spec.slip
                if task in ("plain", "seek", "avoid") and dest != cell:
                    rewards[c, s, a] = spec.move_reward
                if on_target and task == "seek":
                    rewards[c, s, a] = spec.target_reward
                elif on_target and task == "avoid":
                    rewards[c, s, a] = -spec.target_reward

    state_labels = tuple(f"r{cell[0]}c{cell[1]}:{sig}" for sig in index.signatures for cell in index.cells)
    context_labels = tuple(f"{task}_{c}" if spec.tasks.count(task) > 1 else task for c, task in enumerate(spec.tasks))
    logger.debug("Built gridworld with %d cells, %d states, %d contexts", n_cells, n_s, n_c)
    return ensure_valid(TabularCMDP(
        transitions=transitions,
        rewards=rewards,
        p_context=np.full(n_c, 1.0 / n_c),
        p_initial=np.tile(p_start, (n_c, 1)),
        gamma=spec.gamma,
        state_labels=state_labels,
        action_labels=GRID_ACTIONS,
        context_labels=context_labels,
    ))


def build_random_cmdp(n_states: int, n_actions: int, n_contexts: int, gamma: float, seed: int) -> TabularCMDP:
    """Random instance: normalized positive transition rows, rewards in [-1, 1]."""
    if min(n_states, n_actions, n_contexts) < 1:
        raise InvalidInputError("state, action and context counts must be >= 1")
    if not 0.0 <= gamma < 1.0:
        raise InvalidInputError("gamma must lie in [0, 1)")
    rng = make_rng(seed, Stream.RANDOM_CMDP)
    raw = rng.random((n_contexts, n_states, n_actions, n_states)) + 1e-3
    rewards = rng.uniform(-1.0, 1.0, size=(n_contexts, n_states, n_actions))
    p_context = rng.random(n_contexts) + 0.5
    p_initial = rng.random((n_contexts, n_states)) + 1e-3
    return TabularCMDP(
        transitions=raw / raw.sum(axis=-1, keepdims=True),
        rewards=rewards,
        p_context=p_context / p_context.sum(),
        p_initial=p_initial / p_initial.sum(axis=-1, keepdims=True),
        gamma=gamma,
    )


# ── Environment file codec ─────────────────────────────────────────────

def _validation_detail(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors()[:10]:
        loc = ".".join(str(x) for x in err["loc"]) or "<document>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def to_model(cmdp: TabularCMDP) -> EnvironmentFile:
    return EnvironmentFile(
        n_states=cmdp.n_states,
        n_actions=cmdp.n_actions,
        n_contexts=cmdp.n_contexts,
        gamma=cmdp.gamma,
        transitions=cmdp.transitions.tolist(),
        rewards=cmdp.rewards.tolist(),
        p_context=cmdp.p_context.tolist(),
        p_initial=cmdp.p_initial.tolist(),
        labels=EnvironmentLabels(
            states=None if cmdp.state_labels is None else list(cmdp.state_labels),
            actions=None if cmdp.action_labels is None else list(cmdp.action_labels),
            contexts=None if cmdp.context_labels is None else list(cmdp.context_labels),
        ),
    )


def to_json(cmdp: TabularCMDP) -> str:
    return to_model(cmdp).model_dump_json(indent=2)


def from_json(text: str) -> TabularCMDP:
    """Parse an environment file. Shape errors name the offending key."""
    try:
        doc = EnvironmentFile.model_validate_json(text)
    except ValidationError as exc:
        raise InvalidInputError(f"invalid environment file: {_validation_detail(exc)}") from exc

    def table(name, value, shape):
        try:
            array = np.array(value, dtype=float)
        except ValueError as exc:
            raise InvalidInputError(f"{name}: ragged table") from exc
        if array.shape != shape:
            raise InvalidInputError(f"{name}: shape {array.shape}, expected {shape}")
        return array

    c, s, a = doc.n_contexts, doc.n_states, doc.n_actions
    return TabularCMDP(
        transitions=table("transitions", doc.transitions, (c, s, a, s)),
        rewards=table("rewards", doc.rewards, (c, s, a)),
        p_context=table("p_context", doc.p_context, (c,)),
        p_initial=table("p_initial", doc.p_initial, (c, s)),
        gamma=doc.gamma,
        state_labels=doc.labels.states,
        action_labels=doc.labels.actions,
        context_labels=doc.labels.contexts,
    )


def load_cmdp(path: str | Path, validated: bool = True) -> TabularCMDP:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InvalidInputError(f"cannot read environment file {path}: {exc}") from exc
    cmdp = from_json(text)
    return ensure_valid(cmdp) if validated else cmdp


def save_cmdp(cmdp: TabularCMDP, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(cmdp))
    return path
