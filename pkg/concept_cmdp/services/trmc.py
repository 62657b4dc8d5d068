"""
Trust Region Monte Carlo over concepts.

The agent only observes (concept, reward). Every-visit Monte Carlo returns
feed Q_phi; every few episodes each visited (context, concept) row moves
toward an entropy-targeted softmax of its Q-values, limited by a KL trust
region around the current row.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import bisect, brentq
from scipy.special import entr, logsumexp

from config import MIN_LOG_PROB
from errors import InvalidInputError, SupportError
from schemas import TRMCConfig
from services.cmdp import Policy, TabularCMDP, Trajectory, default_horizon, sample_episode
from services.info import kl_divergence
from services.rng import Stream, draw_from_cdf, make_rng
from services.solver import boltzmann_rows, evaluate_policy

logger = logging.getLogger(__name__)

_ENTROPY_TOL = 1e-6
_LAMBDA_XTOL = 1e-8


# ── Learning curves ────────────────────────────────────────────────────

@dataclass
class LearningCurve:
    """Per-episode record of one seeded run."""
    seed: int
    contexts: list[int] = field(default_factory=list)
    returns: list[float] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)
    expected_returns: list[float] = field(default_factory=list)
    final_policy: Optional[Policy] = None

    def __len__(self) -> int:
        return len(self.returns)

    def record(self, trajectory: Trajectory, gamma: float, expected: float):
        self.contexts.append(trajectory.context)
        self.returns.append(trajectory.discounted_return(gamma))
        self.steps.append(len(trajectory))
        self.expected_returns.append(expected)


class ExpectedReturn:
    """Exact expected return of the acting policy, refreshed every ``period`` episodes."""

    def __init__(self, cmdp: TabularCMDP, period: int):
        self.cmdp = cmdp
        self.period = period
        self.last = float("nan")

    def __call__(self, episode: int, policy: Policy) -> float:
        if episode % self.period == 0:
            self.last = evaluate_policy(self.cmdp, policy)
        return self.last


# ── State ──────────────────────────────────────────────────────────────

@dataclass
class TRMCState:
    q_table: np.ndarray              # (C, K, A) running mean returns
    visit_counts: np.ndarray         # (C, K, A)
    policy: np.ndarray               # (C, K, A)
    entropy_target: float
    config: TRMCConfig
    gamma: float
    initial_entropy: float = 0.0
    max_entropy: float = 0.0
    n_updates: int = 0
    visited: Optional[np.ndarray] = None      # (C, K) ever visited
    kl_history: list[float] = field(default_factory=list)
    clamped: int = 0

    @classmethod
    def initial(cls, n_contexts: int, n_concepts: int, n_actions: int, gamma: float, config: TRMCConfig) -> "TRMCState":
        h0 = config.initial_entropy_frac * math.log(n_actions)
        shape = (n_contexts, n_concepts, n_actions)
        return cls(
            q_table=np.zeros(shape),
            visit_counts=np.zeros(shape, dtype=int),
            policy=np.full(shape, 1.0 / n_actions),
            entropy_target=min(max(config.entropy_floor, h0), math.log(n_actions)),
            config=config,
            gamma=gamma,
            initial_entropy=h0,
            max_entropy=math.log(n_actions),
            visited=np.zeros(shape[:2], dtype=bool),
        )

    def entropy_after(self, n_updates: int) -> float:
        target = max(self.config.entropy_floor, self.initial_entropy * self.config.entropy_decay ** n_updates)
        return min(target, self.max_entropy)


# ── Building blocks ────────────────────────────────────────────────────

def update_q_every_visit(state: TRMCState, trajectory: Trajectory) -> TRMCState:
    """Fold the discounted return from every visit of (concept, action) into its running mean."""
    c = trajectory.context
    steps = trajectory.steps
    returns = np.empty(len(steps))
    g = 0.0
    for t in range(len(steps) - 1, -1, -1):
        g = steps[t].reward + state.gamma * g
        returns[t] = g
    for step, g in zip(steps, returns):
        k, a = step.state, step.action
        state.visit_counts[c, k, a] += 1
        state.q_table[c, k, a] += (g - state.q_table[c, k, a]) / state.visit_counts[c, k, a]
        state.visited[c, k] = True
    return state


def _softmax_entropy(q_row: np.ndarray, alpha: float) -> float:
    log_p = q_row / alpha
    log_p = log_p - logsumexp(log_p)
    return float(entr(np.exp(log_p)).sum())


def temperature_search(
    q_row: np.ndarray, entropy_target: float, alpha_bounds: tuple[float, float]
) -> tuple[float, bool]:
    """
    alpha with H(softmax(q_row / alpha)) = entropy_target, searched on log alpha.
    Returns (alpha, exact); unattainable targets clamp to the nearest bound.
    """
    q_row = np.asarray(q_row, dtype=float)
    alpha_min, alpha_max = alpha_bounds
    max_entropy = math.log(q_row.shape[0])
    if not -_ENTROPY_TOL <= entropy_target <= max_entropy + _ENTROPY_TOL:
        raise InvalidInputError(f"entropy target {entropy_target} outside [0, log {q_row.shape[0]}]")
    if np.ptp(q_row) == 0.0:
        return alpha_max, abs(entropy_target - max_entropy) <= _ENTROPY_TOL

    low = _softmax_entropy(q_row, alpha_min)
    high = _softmax_entropy(q_row, alpha_max)
    if entropy_target <= low:
        return alpha_min, abs(entropy_target - low) <= _ENTROPY_TOL
    if entropy_target >= high:
        return alpha_max, abs(entropy_target - high) <= _ENTROPY_TOL
    log_alpha = brentq(
        lambda x: _softmax_entropy(q_row, math.exp(x)) - entropy_target,
        math.log(alpha_min), math.log(alpha_max), xtol=1e-12,
    )
    return math.exp(log_alpha), True


def _geometric_mix(log_current: np.ndarray, log_target: np.ndarray, lam: float) -> np.ndarray:
    log_p = (1.0 - lam) * log_current + lam * log_target
    log_p = log_p - logsumexp(log_p)
    probs = np.exp(np.maximum(log_p, MIN_LOG_PROB))
    return probs / probs.sum()


def trust_region_project(current: np.ndarray, target: np.ndarray, epsilon_mc: float) -> np.ndarray:
    """
    Furthest point toward ``target`` on the geometric path
    p_lambda ~ current^(1 - lambda) target^lambda with KL(p_lambda || current) <= epsilon_mc.
    """
    current = np.asarray(current, dtype=float)
    target = np.asarray(target, dtype=float)
    if current.shape != target.shape:
        raise InvalidInputError("current and target rows differ in length")
    if np.any(current <= 0) or np.any(target <= 0):
        raise SupportError("trust region projection needs full-support rows")
    if epsilon_mc <= 0:
        return current.copy()
    if kl_divergence(target, current) <= epsilon_mc:
        return target.copy()

    log_current, log_target = np.log(current), np.log(target)
    excess = lambda lam: kl_divergence(_geometric_mix(log_current, log_target, lam), current) - epsilon_mc  # noqa: E731
    lam = bisect(excess, 0.0, 1.0, xtol=_LAMBDA_XTOL)
    while lam > 0.0 and excess(lam) > 0.0:
        lam = max(0.0, lam - _LAMBDA_XTOL)
    return _geometric_mix(log_current, log_target, lam)


def _update_policy(state: TRMCState):
    """One policy-improvement sweep over every visited (context, concept)."""
    config = state.config
    for c, k in zip(*np.nonzero(state.visited)):
        alpha, exact = temperature_search(state.q_table[c, k], state.entropy_target, config.alpha_bounds)
        if not exact:
            state.clamped += 1
        target = boltzmann_rows(state.q_table[c, k], alpha)
        old = state.policy[c, k]
        new = trust_region_project(old, target, config.epsilon_mc)
        state.kl_history.append(kl_divergence(new, old))
        state.policy[c, k] = new
    state.n_updates += 1
    state.entropy_target = state.entropy_after(state.n_updates)


# ── Run ────────────────────────────────────────────────────────────────

def _assignment(classifier) -> np.ndarray:
    if getattr(classifier, "mode", "hard") != "hard":
        logger.debug("TRMC uses the hard view of a soft classifier")
    return np.asarray(classifier.hard_assignment(), dtype=int)


def run_trmc(cmdp: TabularCMDP, classifier, config: Optional[TRMCConfig] = None) -> tuple[TRMCState, LearningCurve]:
    """
    Run TRMC for ``config.episode_budget`` episodes. Contexts are drawn from
    p_context each episode; tables are kept per context.
    """
    config = config or TRMCConfig()
    assignment = _assignment(classifier)
    if assignment.shape != (cmdp.n_states,):
        raise InvalidInputError(f"classifier covers {assignment.shape[0]} states, CMDP has {cmdp.n_states}")
    n_concepts = int(classifier.n_concepts)
    state = TRMCState.initial(cmdp.n_contexts, n_concepts, cmdp.n_actions, cmdp.gamma, config)
    horizon = config.horizon or default_horizon(cmdp.gamma)
    rng = make_rng(config.seed, Stream.TRMC)
    context_cdf = np.cumsum(cmdp.p_context)
    expected = ExpectedReturn(cmdp, config.eval_period)
    curve = LearningCurve(seed=config.seed)

    for episode in range(config.episode_budget):
        context = draw_from_cdf(context_cdf, rng.random())
        episode_seed = int(rng.integers(0, 2**31 - 1))
        acting = Policy(state.policy[:, assignment, :])
        trajectory = sample_episode(cmdp, acting, context, episode_seed, horizon)
        curve.record(trajectory, cmdp.gamma, expected(episode, acting))
        update_q_every_visit(state, trajectory.observe(assignment))
        if (episode + 1) % config.update_period_episodes == 0:
            _update_policy(state)
        if (episode + 1) % 100 == 0:
            logger.debug("TRMC episode %d: entropy target %.4f", episode + 1, state.entropy_target)

    if state.clamped:
        logger.warning("Temperature search clamped alpha %d times", state.clamped)
    curve.final_policy = Policy(state.policy[:, assignment, :])
    return state, curve
