"""
Exact per-context solution of a tabular CMDP.

Value iteration to a sup-norm Bellman residual, an exact policy-evaluation
polish of the greedy policy, Boltzmann/epsilon-greedy softening, discounted
occupancy measures and exact expected returns.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import ValidationError
from scipy.linalg import lu_factor, lu_solve
from scipy.special import logsumexp

from config import (
    SOLVER_TOL, SOLVER_MAX_ITERS, MAX_DENSE_STATES, OCCUPANCY_TOL,
    SOFTEN_TAU_SCALE, MIN_LOG_PROB,
)
from errors import ConvergenceError, CapabilityError, InvalidInputError
from schemas import SolutionFile, SolverMetadata
from services.cmdp import Policy, TabularCMDP

logger = logging.getLogger(__name__)

SoftenMode = Literal["boltzmann", "epsilon_greedy"]


@dataclass(frozen=True, eq=False)
class Solution:
    q_values: np.ndarray             # (C, S, A)
    v_values: np.ndarray             # (C, S)
    soft_optimal: Policy
    occupancy: np.ndarray            # (C, S)
    f_constant: float
    tau: float
    tol: float = SOLVER_TOL
    iterations: tuple[int, ...] = ()
    occupancy_policy: str = "soft"

    def __post_init__(self):
        for name in ("q_values", "v_values", "occupancy"):
            array = np.array(getattr(self, name), dtype=float, copy=True)
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @property
    def greedy(self) -> Policy:
        return greedy_policy(self.q_values)


# ── Linear algebra helpers ─────────────────────────────────────────────

def _check_dense(n_states: int):
    if n_states > MAX_DENSE_STATES:
        raise CapabilityError(f"{n_states} states exceed the dense solver limit of {MAX_DENSE_STATES}")


def _policy_matrices(cmdp: TabularCMDP, context: int, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """State-to-state matrix and expected reward vector of a policy in one context."""
    p_pi = np.einsum("sa,sat->st", probs, cmdp.transitions[context])
    r_pi = np.einsum("sa,sa->s", probs, cmdp.rewards[context])
    return p_pi, r_pi


def _evaluate(cmdp: TabularCMDP, context: int, probs: np.ndarray) -> np.ndarray:
    """V_pi for one context: solve (I - gamma P_pi) v = r_pi."""
    _check_dense(cmdp.n_states)
    p_pi, r_pi = _policy_matrices(cmdp, context, probs)
    if cmdp.gamma == 0.0:
        return r_pi
    system = np.eye(cmdp.n_states) - cmdp.gamma * p_pi
    return lu_solve(lu_factor(system), r_pi)


def _backup(cmdp: TabularCMDP, context: int, v: np.ndarray) -> np.ndarray:
    return cmdp.rewards[context] + cmdp.gamma * (cmdp.transitions[context] @ v)


# ── Value iteration ────────────────────────────────────────────────────

def _value_iteration(cmdp: TabularCMDP, context: int, tol: float, max_iters: int):
    if tol <= 0:
        raise InvalidInputError("tol must be > 0")
    if not 0 <= context < cmdp.n_contexts:
        raise InvalidInputError(f"context {context} out of range [0, {cmdp.n_contexts})")

    v = np.zeros(cmdp.n_states)
    for iteration in range(1, max_iters + 1):
        q = _backup(cmdp, context, v)
        v_next = q.max(axis=1)
        residual = float(np.max(np.abs(v_next - v)))
        v = v_next
        if residual < tol:
            break
    else:
        raise ConvergenceError(
            f"value iteration did not reach residual {tol:g} in {max_iters} iterations (context {context})"
        )

    q = _backup(cmdp, context, v)
    if cmdp.gamma > 0.0 and cmdp.n_states <= MAX_DENSE_STATES:
        greedy = np.eye(cmdp.n_actions)[q.argmax(axis=1)]
        v_exact = _evaluate(cmdp, context, greedy)
        q_exact = _backup(cmdp, context, v_exact)
        if _residual(cmdp, context, q_exact) <= _residual(cmdp, context, q):
            q = q_exact
    logger.debug("Context %d solved in %d iterations", context, iteration)
    return q, q.max(axis=1), iteration


def value_iteration(
    cmdp: TabularCMDP,
    context: int,
    tol: float = SOLVER_TOL,
    max_iters: int = SOLVER_MAX_ITERS,
) -> tuple[np.ndarray, np.ndarray]:
    """Optimal (q, v) for one context with sup-norm Bellman residual below ``tol``."""
    q, v, _ = _value_iteration(cmdp, context, tol, max_iters)
    return q, v


def _residual(cmdp: TabularCMDP, context: int, q: np.ndarray) -> float:
    return float(np.max(np.abs(q - _backup(cmdp, context, q.max(axis=1)))))


def bellman_residual(cmdp: TabularCMDP, q_values: np.ndarray) -> float:
    """Sup-norm Bellman optimality residual of a (C, S, A) q-table."""
    q_values = np.asarray(q_values, dtype=float)
    if q_values.shape != (cmdp.n_contexts, cmdp.n_states, cmdp.n_actions):
        raise InvalidInputError(
            f"q-values shape {q_values.shape} does not match CMDP {(cmdp.n_contexts, cmdp.n_states, cmdp.n_actions)}"
        )
    return max(_residual(cmdp, c, q_values[c]) for c in range(cmdp.n_contexts))


# ── Policies from q-values ─────────────────────────────────────────────

def boltzmann_rows(q: np.ndarray, tau: float) -> np.ndarray:
    """Softmax of q / tau along the last axis with full support."""
    log_p = q / tau
    log_p = log_p - logsumexp(log_p, axis=-1, keepdims=True)
    probs = np.exp(np.maximum(log_p, MIN_LOG_PROB))
    return probs / probs.sum(axis=-1, keepdims=True)


def epsilon_greedy_rows(q: np.ndarray, epsilon: float) -> np.ndarray:
    n_actions = q.shape[-1]
    greedy = np.eye(n_actions)[np.argmax(q, axis=-1)]
    return (1.0 - epsilon) * greedy + epsilon / n_actions


def soften_policy(
    q_values: np.ndarray,
    mode: SoftenMode = "boltzmann",
    tau: Optional[float] = None,
    epsilon: Optional[float] = None,
) -> Policy:
    """
    Full-support stand-in for the optimal policy.

    ``boltzmann`` needs ``tau > 0``; ``epsilon_greedy`` needs ``epsilon`` in
    (0, 1]. The argmax action is kept wherever it is unique.
    """
    q_values = np.asarray(q_values, dtype=float)
    if mode == "boltzmann":
        if tau is None or not tau > 0:
            raise InvalidInputError("boltzmann softening needs tau > 0")
        return Policy(boltzmann_rows(q_values, tau))
    if mode == "epsilon_greedy":
        if epsilon is None or not 0 < epsilon <= 1:
            raise InvalidInputError("epsilon_greedy softening needs epsilon in (0, 1]")
        return Policy(epsilon_greedy_rows(q_values, epsilon))
    raise InvalidInputError(f"unknown softening mode {mode!r}")


def greedy_policy(q_values: np.ndarray) -> Policy:
    """Deterministic argmax policy; ties go to the lowest action index."""
    q_values = np.asarray(q_values, dtype=float)
    return Policy.deterministic(np.argmax(q_values, axis=-1), q_values.shape[-1])


def default_tau(cmdp: TabularCMDP) -> float:
    sup = cmdp.reward_sup
    return SOFTEN_TAU_SCALE * sup if sup > 0 else SOFTEN_TAU_SCALE


def f_constant(cmdp: TabularCMDP) -> float:
    return 2.0 * cmdp.reward_sup / (1.0 - cmdp.gamma) ** 2


# ── Occupancy and evaluation ───────────────────────────────────────────

def discounted_occupancy(cmdp: TabularCMDP, context: int, policy: Policy) -> np.ndarray:
    """(1 - gamma) sum_t gamma^t Pr(s_t = s) under ``policy`` in ``context``."""
    if not 0 <= context < cmdp.n_contexts:
        raise InvalidInputError(f"context {context} out of range [0, {cmdp.n_contexts})")
    p0 = cmdp.p_initial[context]
    if cmdp.gamma == 0.0:
        return p0.copy()
    _check_dense(cmdp.n_states)
    p_pi, _ = _policy_matrices(cmdp, context, policy.probs[context])
    system = np.eye(cmdp.n_states) - cmdp.gamma * p_pi.T
    x = lu_solve(lu_factor(system), (1.0 - cmdp.gamma) * p0)
    if not np.all(np.isfinite(x)):
        raise ConvergenceError(f"occupancy system is singular in context {context}")
    x = np.where(np.abs(x) < OCCUPANCY_TOL, np.maximum(x, 0.0), x)
    total = x.sum()
    if np.any(x < 0) or abs(total - 1.0) > OCCUPANCY_TOL:
        raise ConvergenceError(f"occupancy in context {context} is not a distribution (mass {total:.12g})")
    return x / total


def policy_values(cmdp: TabularCMDP, policy: Policy) -> np.ndarray:
    """V_pi for every context, shape (C, S)."""
    if policy.probs.shape != (cmdp.n_contexts, cmdp.n_states, cmdp.n_actions):
        raise InvalidInputError(
            f"policy shape {policy.probs.shape} does not match CMDP {(cmdp.n_contexts, cmdp.n_states, cmdp.n_actions)}"
        )
    return np.stack([_evaluate(cmdp, c, policy.probs[c]) for c in range(cmdp.n_contexts)])


def evaluate_policy(cmdp: TabularCMDP, policy: Policy) -> float:
    """Expected discounted return over p_context and p_initial."""
    values = policy_values(cmdp, policy)
    return float(cmdp.p_context @ np.einsum("cs,cs->c", cmdp.p_initial, values))


def regret(cmdp: TabularCMDP, policy: Policy, reference: Optional[Policy] = None) -> float:
    """R(reference) - R(policy); the reference defaults to the greedy optimum."""
    if reference is None:
        q = np.stack([value_iteration(cmdp, c)[0] for c in range(cmdp.n_contexts)])
        reference = greedy_policy(q)
    return evaluate_policy(cmdp, reference) - evaluate_policy(cmdp, policy)


# ── Full solve ─────────────────────────────────────────────────────────

def solve(
    cmdp: TabularCMDP,
    tau: Optional[float] = None,
    tol: float = SOLVER_TOL,
    occupancy_policy: Literal["soft", "greedy"] = "soft",
    mode: SoftenMode = "boltzmann",
    epsilon: Optional[float] = None,
    threads: int = 1,
) -> Solution:
    """
    Solve every context and bundle values, the softened optimal policy, its
    occupancy measure and F_M. ``occupancy_policy="greedy"`` measures
    visitation under the deterministic optimum instead.
    """
    tau = default_tau(cmdp) if tau is None else float(tau)
    contexts = range(cmdp.n_contexts)
    if threads > 1 and cmdp.n_contexts > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: _value_iteration(cmdp, c, tol, SOLVER_MAX_ITERS), contexts))
    else:
        results = [_value_iteration(cmdp, c, tol, SOLVER_MAX_ITERS) for c in contexts]

    q_values = np.stack([r[0] for r in results])
    v_values = np.stack([r[1] for r in results])
    soft = soften_policy(q_values, mode=mode, tau=tau, epsilon=epsilon)
    visit_policy = soft if occupancy_policy == "soft" else greedy_policy(q_values)
    occupancy = np.stack([discounted_occupancy(cmdp, c, visit_policy) for c in contexts])

    logger.info(
        "Solved CMDP (S=%d, A=%d, C=%d, gamma=%.3g) tau=%.4g",
        cmdp.n_states, cmdp.n_actions, cmdp.n_contexts, cmdp.gamma, tau,
    )
    return Solution(
        q_values=q_values,
        v_values=v_values,
        soft_optimal=soft,
        occupancy=occupancy,
        f_constant=f_constant(cmdp),
        tau=tau,
        tol=tol,
        iterations=tuple(int(r[2]) for r in results),
        occupancy_policy=occupancy_policy,
    )


# ── Solution file ──────────────────────────────────────────────────────

def solution_to_json(solution: Solution) -> str:
    return SolutionFile(
        q_values=solution.q_values.tolist(),
        v_values=solution.v_values.tolist(),
        soft_optimal=solution.soft_optimal.probs.tolist(),
        occupancy=solution.occupancy.tolist(),
        f_constant=solution.f_constant,
        metadata=SolverMetadata(
            tol=solution.tol,
            iterations=list(solution.iterations),
            tau=solution.tau,
            occupancy_policy=solution.occupancy_policy,
        ),
    ).model_dump_json(indent=2)


def solution_from_json(text: str) -> Solution:
    try:
        doc = SolutionFile.model_validate_json(text)
    except ValidationError as exc:
        raise InvalidInputError(f"invalid solution file: {exc.errors()[0]['msg']}") from exc
    try:
        return Solution(
            q_values=np.array(doc.q_values, dtype=float),
            v_values=np.array(doc.v_values, dtype=float),
            soft_optimal=Policy(np.array(doc.soft_optimal, dtype=float)),
            occupancy=np.array(doc.occupancy, dtype=float),
            f_constant=doc.f_constant,
            tau=doc.metadata.tau,
            tol=doc.metadata.tol,
            iterations=tuple(doc.metadata.iterations),
            occupancy_policy=doc.metadata.occupancy_policy,
        )
    except ValueError as exc:
        raise InvalidInputError(f"invalid solution file: {exc}") from exc


def load_solution(path: str | Path) -> Solution:
    path = Path(path)
    try:
        return solution_from_json(path.read_text())
    except OSError as exc:
        raise InvalidInputError(f"cannot read solution file {path}: {exc}") from exc
