"""
Learning concept classifiers by minimizing I(S : A | S_phi, C).

Three optimizers share one vectorized objective: exhaustive enumeration of
hard assignments, hill climbing over single-state moves, and annealed
gradient descent on softmax logits (also for factored classifiers). The
likelihood and context-free baselines live here too.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np
from pydantic import ValidationError
from scipy.special import entr, softmax

from config import EXHAUSTIVE_LIMIT, EXHAUSTIVE_BATCH, LOGIT_CLIP
from errors import CapabilityError, ConvergenceError, InvalidInputError
from schemas import ClassifierFile, LearnConfig
from services.cmdp import Policy, TabularCMDP, sample_episode
from services.info import build_joint, conditional_mi, context_free_mi
from services.rng import Stream, draw_from_cdf, make_rng
from services.solver import Solution

logger = logging.getLogger(__name__)

Mode = Literal["soft", "hard"]


# ── Classifiers ────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class ConceptClassifier:
    logits: np.ndarray               # (S, K)
    temperature: float = 1.0
    mode: Mode = "soft"

    def __post_init__(self):
        logits = np.array(self.logits, dtype=float, copy=True)
        if logits.ndim != 2 or logits.shape[1] < 1:
            raise InvalidInputError("logits must be indexed (state, concept)")
        if not np.all(np.isfinite(logits)):
            raise InvalidInputError("logits must be finite")
        if not self.temperature > 0:
            raise InvalidInputError("temperature must be > 0")
        if self.mode not in ("soft", "hard"):
            raise InvalidInputError(f"unknown classifier mode {self.mode!r}")
        logits.setflags(write=False)
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "temperature", float(self.temperature))

    @property
    def n_states(self) -> int:
        return self.logits.shape[0]

    @property
    def n_concepts(self) -> int:
        return self.logits.shape[1]

    @property
    def factor_sizes(self) -> list[int]:
        return [self.n_concepts]

    def soft_rows(self) -> np.ndarray:
        return softmax(self.logits / self.temperature, axis=1)

    def hard_assignment(self) -> np.ndarray:
        """Argmax concept per state, lowest index on ties."""
        return np.argmax(self.logits, axis=1)

    def hard_rows(self) -> np.ndarray:
        return np.eye(self.n_concepts)[self.hard_assignment()]

    def rows(self) -> np.ndarray:
        return self.soft_rows() if self.mode == "soft" else self.hard_rows()

    def harden(self) -> "ConceptClassifier":
        return ConceptClassifier(self.logits, self.temperature, "hard")

    def permuted(self, permutation: Sequence[int]) -> "ConceptClassifier":
        """Relabel concepts: new concept j is old concept permutation[j]."""
        return ConceptClassifier(self.logits[:, list(permutation)], self.temperature, self.mode)

    @classmethod
    def from_assignment(cls, assignment: Sequence[int], n_concepts: int) -> "ConceptClassifier":
        assignment = np.asarray(assignment, dtype=int)
        if assignment.ndim != 1 or np.any(assignment < 0) or np.any(assignment >= n_concepts):
            raise InvalidInputError(f"assignment entries must lie in [0, {n_concepts})")
        return cls(LOGIT_CLIP * np.eye(n_concepts)[assignment], 1.0, "hard")

    @classmethod
    def identity(cls, n_states: int) -> "ConceptClassifier":
        return cls.from_assignment(np.arange(n_states), n_states)

    @classmethod
    def constant(cls, n_states: int) -> "ConceptClassifier":
        return cls(np.zeros((n_states, 1)), 1.0, "hard")

    @classmethod
    def uniform(cls, n_states: int, n_concepts: int) -> "ConceptClassifier":
        return cls(np.zeros((n_states, n_concepts)), 1.0, "soft")


@dataclass(frozen=True, eq=False)
class FactoredClassifier:
    """Tuple of independent factor classifiers; concept index is row-major over factors."""
    factors: tuple[ConceptClassifier, ...]

    def __post_init__(self):
        factors = tuple(self.factors)
        if not factors:
            raise InvalidInputError("a factored classifier needs at least one factor")
        if len({f.n_states for f in factors}) != 1:
            raise InvalidInputError("all factors must cover the same states")
        if len({f.mode for f in factors}) != 1:
            raise InvalidInputError("all factors must share one mode")
        object.__setattr__(self, "factors", factors)

    @property
    def n_states(self) -> int:
        return self.factors[0].n_states

    @property
    def factor_sizes(self) -> list[int]:
        return [f.n_concepts for f in self.factors]

    @property
    def n_concepts(self) -> int:
        return math.prod(self.factor_sizes)

    @property
    def mode(self) -> Mode:
        return self.factors[0].mode

    @property
    def temperature(self) -> float:
        return self.factors[0].temperature

    @property
    def logits(self) -> np.ndarray:
        return np.concatenate([f.logits for f in self.factors], axis=1)

    def soft_rows(self) -> np.ndarray:
        return _product_rows([f.soft_rows() for f in self.factors])

    def hard_assignment(self) -> np.ndarray:
        return np.ravel_multi_index([f.hard_assignment() for f in self.factors], self.factor_sizes)

    def hard_rows(self) -> np.ndarray:
        return np.eye(self.n_concepts)[self.hard_assignment()]

    def rows(self) -> np.ndarray:
        return self.soft_rows() if self.mode == "soft" else self.hard_rows()

    def harden(self) -> "FactoredClassifier":
        return FactoredClassifier(tuple(f.harden() for f in self.factors))


# ── Vectorized objective ───────────────────────────────────────────────

class _Objective:
    """
    I(S:A|S_phi,C) as a function of the (S, K) concept rows, with the
    problem weights precomputed. ``context_free`` pools the contexts first.
    """

    def __init__(self, cmdp: TabularCMDP, solution: Solution, context_free: bool = False):
        weights = cmdp.p_context[:, None] * solution.occupancy                    # (C, S)
        weighted_policy = weights[:, :, None] * solution.soft_optimal.probs       # (C, S, A)
        if context_free and cmdp.n_contexts > 1:
            weights = weights.sum(axis=0, keepdims=True)
            weighted_policy = weighted_policy.sum(axis=0, keepdims=True)
        self.weights = weights
        self.weighted_policy = weighted_policy
        self.h_state = float(entr(weighted_policy).sum() - entr(weights).sum())

    def value(self, rows: np.ndarray) -> float:
        m = self.weights @ rows
        n = np.einsum("csa,sk->cka", self.weighted_policy, rows)
        return float(entr(n).sum() - entr(m).sum()) - self.h_state

    def batch_values(self, onehots: np.ndarray) -> np.ndarray:
        """Values for a batch of hard assignments given as (B, S, K) one-hot rows."""
        m = np.einsum("cs,bsk->bck", self.weights, onehots)
        n = np.einsum("csa,bsk->bcka", self.weighted_policy, onehots)
        return entr(n).sum(axis=(1, 2, 3)) - entr(m).sum(axis=(1, 2)) - self.h_state

    def row_gradient(self, rows: np.ndarray) -> np.ndarray:
        """dI / dphi(k | s): -sum_{c,a} w(c,s) pi*(a|s,c) log pi_phi*(a|k,c)."""
        m = self.weights @ rows
        n = np.einsum("csa,sk->cka", self.weighted_policy, rows)
        tiny = np.finfo(float).tiny
        log_abstract = np.log(np.maximum(n, tiny)) - np.log(np.maximum(m, tiny))[:, :, None]
        return -np.einsum("csa,cka->sk", self.weighted_policy, log_abstract)


def _softmax_backward(probs: np.ndarray, grad_rows: np.ndarray, temperature: float) -> np.ndarray:
    inner = np.sum(probs * grad_rows, axis=1, keepdims=True)
    return probs * (grad_rows - inner) / temperature


def _factor_rows(logits: list[np.ndarray], temperature: float) -> list[np.ndarray]:
    return [softmax(block / temperature, axis=1) for block in logits]


def _product_rows(factor_rows: list[np.ndarray]) -> np.ndarray:
    rows = factor_rows[0]
    for nxt in factor_rows[1:]:
        rows = (rows[:, :, None] * nxt[:, None, :]).reshape(rows.shape[0], -1)
    return rows


def _factored_gradient(objective: _Objective, logits: list[np.ndarray], temperature: float):
    factor_rows = _factor_rows(logits, temperature)
    rows = _product_rows(factor_rows)
    g = objective.row_gradient(rows)
    n_states = rows.shape[0]
    sizes = [block.shape[1] for block in logits]
    g = g.reshape(n_states, *sizes)
    grads = []
    for f, probs in enumerate(factor_rows):
        weighted = g
        for other, other_rows in enumerate(factor_rows):
            if other != f:
                shape = [n_states] + [1] * len(sizes)
                shape[other + 1] = sizes[other]
                weighted = weighted * other_rows.reshape(shape)
        axes = tuple(i + 1 for i in range(len(sizes)) if i != f)
        contracted = weighted.sum(axis=axes) if axes else weighted
        grads.append(_softmax_backward(probs, contracted, temperature))
    return objective.value(rows), grads


def objective(cmdp: TabularCMDP, solution: Solution, classifier) -> float:
    """I(S : A | S_phi, C) of the classifier's rows (soft rows in soft mode)."""
    return conditional_mi(build_joint(cmdp, solution, classifier))


def objective_gradient(cmdp: TabularCMDP, solution: Solution, classifier, context_free: bool = False):
    """
    Gradient of the objective with respect to the logits. Returns an (S, K)
    array for a ``ConceptClassifier`` and a list of per-factor arrays for a
    ``FactoredClassifier``; soft rows are used regardless of mode.
    """
    problem = _Objective(cmdp, solution, context_free)
    if isinstance(classifier, FactoredClassifier):
        _, grads = _factored_gradient(problem, [f.logits for f in classifier.factors], classifier.temperature)
        return grads
    _, grads = _factored_gradient(problem, [classifier.logits], classifier.temperature)
    return grads[0]


def _constant_result(cmdp: TabularCMDP, solution: Solution) -> tuple[ConceptClassifier, float]:
    classifier = ConceptClassifier.constant(cmdp.n_states)
    return classifier, objective(cmdp, solution, classifier)


# ── Exhaustive enumeration ─────────────────────────────────────────────

def learn_exhaustive(
    cmdp: TabularCMDP, solution: Solution, n_concepts: int, context_free: bool = False
) -> tuple[ConceptClassifier, float]:
    """
    Global optimum over all hard assignments. Ties go to the
    lexicographically smallest assignment vector.
    """
    if n_concepts < 1:
        raise InvalidInputError("n_concepts must be >= 1")
    n_states = cmdp.n_states
    total = n_concepts ** n_states
    if total > EXHAUSTIVE_LIMIT:
        raise CapabilityError(
            f"exhaustive search over {n_concepts}^{n_states} assignments exceeds the limit of {EXHAUSTIVE_LIMIT}"
        )

    problem = _Objective(cmdp, solution, context_free)
    eye = np.eye(n_concepts)
    shape = (n_concepts,) * n_states
    values = np.empty(total)
    for start in range(0, total, EXHAUSTIVE_BATCH):
        stop = min(start + EXHAUSTIVE_BATCH, total)
        assignments = np.stack(np.unravel_index(np.arange(start, stop), shape), axis=1)
        values[start:stop] = problem.batch_values(eye[assignments])

    best = int(np.argmax(values <= values.min() + 1e-12))
    assignment = np.array(np.unravel_index(best, shape))
    logger.info("Exhaustive search over %d assignments: objective %.6g", total, values[best])
    return ConceptClassifier.from_assignment(assignment, n_concepts), max(float(values[best]), 0.0)


# ── Local search ───────────────────────────────────────────────────────

def _neighbors(assignment: np.ndarray, n_concepts: int) -> tuple[np.ndarray, np.ndarray]:
    """All single-state reassignments in (state, concept) order, plus a no-op mask."""
    n_states = assignment.shape[0]
    moved_state = np.repeat(np.arange(n_states), n_concepts)
    new_concept = np.tile(np.arange(n_concepts), n_states)
    candidates = np.repeat(assignment[None, :], n_states * n_concepts, axis=0)
    candidates[np.arange(n_states * n_concepts), moved_state] = new_concept
    return candidates, assignment[moved_state] == new_concept


def _climb(problem: _Objective, assignment: np.ndarray, n_concepts: int, max_iters: int):
    eye = np.eye(n_concepts)
    current = float(problem.batch_values(eye[assignment][None])[0])
    for _ in range(max_iters):
        candidates, noop = _neighbors(assignment, n_concepts)
        values = problem.batch_values(eye[candidates])
        values[noop] = np.inf
        best = values.min()
        if not best < current - 1e-12:
            break
        pick = int(np.argmax(values <= best + 1e-12))
        assignment, current = candidates[pick], float(values[pick])
    return assignment, current


def learn_local_search(
    cmdp: TabularCMDP,
    solution: Solution,
    n_concepts: int,
    config: Optional[LearnConfig] = None,
    init: Optional[Sequence[int]] = None,
    context_free: bool = False,
    threads: int = 1,
) -> tuple[ConceptClassifier, float]:
    """
    Hill climbing over single-state moves with random restarts. Each
    restart accepts the best strictly improving move, lowest (state,
    concept) on ties. ``init`` replaces the first restart's start point.
    """
    config = config or LearnConfig(method="local_search")
    if n_concepts < 1:
        raise InvalidInputError("n_concepts must be >= 1")
    if n_concepts == 1:
        return _constant_result(cmdp, solution)

    problem = _Objective(cmdp, solution, context_free)
    starts = [
        make_rng(config.seed, Stream.LEARNER_INIT, r).integers(0, n_concepts, size=cmdp.n_states)
        for r in range(config.restarts)
    ]
    if init is not None:
        init = np.asarray(init, dtype=int)
        if init.shape != (cmdp.n_states,) or np.any(init < 0) or np.any(init >= n_concepts):
            raise InvalidInputError("init must assign every state a concept in range")
        starts[0] = init

    climb = lambda start: _climb(problem, start, n_concepts, config.max_iters)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(climb, starts))
    else:
        results = [climb(start) for start in starts]

    best_assignment, best_value = results[0]
    for assignment, value in results[1:]:
        if value < best_value - 1e-12:
            best_assignment, best_value = assignment, value
    logger.info("Local search (%d restarts): objective %.6g", len(starts), best_value)
    return ConceptClassifier.from_assignment(best_assignment, n_concepts), max(best_value, 0.0)


# ── Gradient descent ───────────────────────────────────────────────────

_MAX_BACKTRACKS = 40
_MAX_STEP = 1e6


def _hard_product(logits: list[np.ndarray]) -> np.ndarray:
    return _product_rows([np.eye(b.shape[1])[np.argmax(b, axis=1)] for b in logits])


def _descend(problem, init: list[np.ndarray], config: LearnConfig):
    """
    Backtracking gradient descent on factor logits. A step is accepted only
    if the objective does not increase; the temperature is cooled on
    schedule under the same rule, so the trace never increases.
    """
    schedule = config.temperature_schedule
    temperature = schedule.initial
    logits = [np.clip(block, -LOGIT_CLIP, LOGIT_CLIP) for block in init]
    value, grads = _factored_gradient(problem, logits, temperature)
    trace = [value]
    step = config.step_size

    for iteration in range(1, config.max_iters + 1):
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise ConvergenceError("non-finite objective gradient; concept support collapsed")
        if max(float(np.max(np.abs(g))) for g in grads) < config.tol:
            break

        for _ in range(_MAX_BACKTRACKS):
            candidate = [np.clip(b - step * g, -LOGIT_CLIP, LOGIT_CLIP) for b, g in zip(logits, grads)]
            candidate_value = problem.value(_product_rows(_factor_rows(candidate, temperature)))
            if candidate_value <= value:
                break
            step *= 0.5
        else:
            break
        logits = candidate
        step = min(step * 1.5, _MAX_STEP)

        if iteration % schedule.every == 0 and temperature > schedule.floor:
            cooler = max(schedule.floor, temperature * schedule.decay)
            if problem.value(_product_rows(_factor_rows(logits, cooler))) <= candidate_value:
                temperature = cooler
        value, grads = _factored_gradient(problem, logits, temperature)
        trace.append(value)

    return logits, temperature, trace


def _gradient_restarts(problem, sizes: list[int], n_states: int, config: LearnConfig):
    best = None
    for restart in range(config.restarts):
        rng = make_rng(config.seed, Stream.LEARNER_INIT, restart)
        init = rng.normal(0.0, 1.0, size=(n_states, sum(sizes)))
        blocks = np.split(init, np.cumsum(sizes)[:-1], axis=1)
        logits, temperature, trace = _descend(problem, blocks, config)
        hardened = problem.value(_hard_product(logits))
        logger.debug("Restart %d: soft %.6g, hardened %.6g", restart, trace[-1], hardened)
        if best is None or hardened < best[0] - 1e-12:
            best = (hardened, logits, temperature, trace)
    return best


def learn_factored(
    cmdp: TabularCMDP,
    solution: Solution,
    factor_sizes: Sequence[int],
    config: Optional[LearnConfig] = None,
    context_free: bool = False,
) -> tuple[FactoredClassifier, float]:
    """
    Jointly optimize independent factor classifiers on the induced product
    classifier. Returns the hardened classifier and its objective.
    """
    config = config or LearnConfig()
    sizes = [int(s) for s in factor_sizes]
    if not sizes or any(s < 1 for s in sizes):
        raise InvalidInputError("factor sizes must be positive")
    if math.prod(sizes) == 1:
        factors = tuple(ConceptClassifier.constant(cmdp.n_states) for _ in sizes)
        classifier = FactoredClassifier(factors)
        return classifier, objective(cmdp, solution, classifier)

    problem = _Objective(cmdp, solution, context_free)
    _, logits, temperature, _ = _gradient_restarts(problem, sizes, cmdp.n_states, config)
    classifier = FactoredClassifier(tuple(ConceptClassifier(b, temperature, "hard") for b in logits))
    value = context_free_mi(build_joint(cmdp, solution, classifier)) if context_free \
        else objective(cmdp, solution, classifier)
    logger.info("Gradient learner %s: hardened objective %.6g", sizes, value)
    return classifier, value


def learn_gradient(
    cmdp: TabularCMDP,
    solution: Solution,
    n_concepts: int,
    config: Optional[LearnConfig] = None,
    context_free: bool = False,
) -> tuple[ConceptClassifier, list[float]]:
    """Annealed gradient descent on soft logits, hardened by argmax. Returns (classifier, soft trace)."""
    config = config or LearnConfig()
    if n_concepts < 1:
        raise InvalidInputError("n_concepts must be >= 1")
    if n_concepts == 1:
        classifier, value = _constant_result(cmdp, solution)
        return classifier, [value]
    problem = _Objective(cmdp, solution, context_free)
    _, logits, temperature, trace = _gradient_restarts(problem, [n_concepts], cmdp.n_states, config)
    return ConceptClassifier(logits[0], temperature, "hard"), trace


def baseline_context_free(
    cmdp: TabularCMDP, solution: Solution, n_concepts: int, config: Optional[LearnConfig] = None
) -> tuple[ConceptClassifier, float]:
    """Gradient learner on I(S : A | S_phi), contexts pooled."""
    classifier, _ = learn_gradient(cmdp, solution, n_concepts, config, context_free=True)
    return classifier, context_free_mi(build_joint(cmdp, solution, classifier))


# ── Likelihood baseline ────────────────────────────────────────────────

def collect_triples(
    cmdp: TabularCMDP, policy: Policy, n_episodes: int, seed: int, horizon: Optional[int] = None
) -> list[tuple[int, int, int]]:
    """(context, state, action) visits from episodes of ``policy``, contexts drawn from p_context."""
    rng = make_rng(seed, Stream.TRIPLES)
    context_cdf = np.cumsum(cmdp.p_context)
    triples = []
    for _ in range(n_episodes):
        context = draw_from_cdf(context_cdf, rng.random())
        episode_seed = int(rng.integers(0, 2**31 - 1))
        trajectory = sample_episode(cmdp, policy, context, episode_seed, horizon)
        triples.extend((context, step.state, step.action) for step in trajectory.steps)
    return triples


def _triple_counts(triples, shape: tuple[int, int, int]) -> np.ndarray:
    data = np.asarray(triples, dtype=int).reshape(-1, 3)
    if data.shape[0] == 0:
        raise InvalidInputError("no (context, state, action) triples given")
    if np.any(data < 0) or np.any(data >= np.array(shape)):
        raise InvalidInputError(f"triples out of range for (contexts, states, actions) = {shape}")
    counts = np.zeros(shape)
    np.add.at(counts, (data[:, 0], data[:, 1], data[:, 2]), 1.0)
    return counts


def likelihood(triples, classifier, abstract_policy: np.ndarray) -> float:
    """sum_i log sum_k phi(k | s_i) pi_phi(a_i | k, c_i)."""
    rows = classifier.rows() if hasattr(classifier, "rows") else np.asarray(classifier, dtype=float)
    abstract_policy = np.asarray(abstract_policy, dtype=float)
    n_contexts, _, n_actions = abstract_policy.shape
    counts = _triple_counts(triples, (n_contexts, rows.shape[0], n_actions))
    model = np.einsum("sk,cka->csa", rows, abstract_policy)
    seen = counts > 0
    with np.errstate(divide="ignore"):
        return float(np.sum(counts[seen] * np.log(model[seen])))


class _NegativeLogLikelihood:
    """Mean negative log-likelihood of the triples as a function of concept rows."""

    def __init__(self, counts: np.ndarray, abstract_policy: np.ndarray):
        self.counts = counts
        self.total = counts.sum()
        self.abstract_policy = abstract_policy

    def _model(self, rows):
        return np.einsum("sk,cka->csa", rows, self.abstract_policy)

    def value(self, rows: np.ndarray) -> float:
        model = self._model(rows)
        seen = self.counts > 0
        return -float(np.sum(self.counts[seen] * np.log(model[seen]))) / self.total

    def row_gradient(self, rows: np.ndarray) -> np.ndarray:
        model = self._model(rows)
        ratio = np.divide(self.counts, model, out=np.zeros_like(model), where=self.counts > 0)
        return -np.einsum("csa,cka->sk", ratio, self.abstract_policy) / self.total


def baseline_likelihood(
    triples,
    n_concepts: int,
    fixed_abstract_policy: np.ndarray,
    config: Optional[LearnConfig] = None,
    n_states: Optional[int] = None,
) -> tuple[ConceptClassifier, float]:
    """
    Maximum-likelihood classifier for Pr(a | s, c) = sum_k phi(k | s) pi_phi(a | k, c)
    with pi_phi held fixed. Returns the hardened classifier and its log-likelihood.
    """
    config = config or LearnConfig()
    abstract = np.asarray(fixed_abstract_policy, dtype=float)
    if abstract.ndim != 3 or abstract.shape[1] != n_concepts:
        raise InvalidInputError(f"fixed abstract policy must be (contexts, {n_concepts}, actions)")
    if np.any(abstract <= 0):
        raise InvalidInputError("fixed abstract policy needs full support")
    data = np.asarray(triples, dtype=int).reshape(-1, 3)
    if n_states is None:
        n_states = int(data[:, 1].max()) + 1 if data.size else 0
    counts = _triple_counts(triples, (abstract.shape[0], n_states, abstract.shape[2]))

    if n_concepts == 1:
        classifier = ConceptClassifier.constant(n_states)
        return classifier, likelihood(triples, classifier, abstract)

    problem = _NegativeLogLikelihood(counts, abstract)
    _, logits, temperature, _ = _gradient_restarts(problem, [n_concepts], n_states, config)
    classifier = ConceptClassifier(logits[0], temperature, "hard")
    return classifier, likelihood(triples, classifier, abstract)


def random_likelihood_policy(n_contexts: int, n_concepts: int, n_actions: int, seed: int) -> np.ndarray:
    """The fixed abstract policy of the likelihood baseline: uniform draws from the simplex."""
    rng = make_rng(seed, Stream.LIKELIHOOD_POLICY)
    return rng.dirichlet(np.ones(n_actions), size=(n_contexts, n_concepts))


# ── Classifier file ────────────────────────────────────────────────────

def classifier_to_json(classifier, method: Optional[str] = None, value: Optional[float] = None) -> str:
    return ClassifierFile(
        n_concepts=classifier.n_concepts,
        logits=np.asarray(classifier.logits).tolist(),
        temperature=classifier.temperature,
        mode=classifier.mode,
        factor_sizes=classifier.factor_sizes,
        method=method,
        objective=value,
    ).model_dump_json(indent=2)


def classifier_from_json(text: str):
    try:
        doc = ClassifierFile.model_validate_json(text)
    except ValidationError as exc:
        detail = "; ".join(
            f"{'.'.join(str(x) for x in err['loc']) or '<document>'}: {err['msg']}" for err in exc.errors()[:5]
        )
        raise InvalidInputError(f"invalid classifier file: {detail}") from exc
    if not doc.logits:
        raise InvalidInputError("invalid classifier file: logits must cover at least one state")
    logits = np.array(doc.logits, dtype=float)
    blocks = np.split(logits, np.cumsum(doc.factor_sizes)[:-1], axis=1)
    factors = [ConceptClassifier(block, doc.temperature, doc.mode) for block in blocks]
    return factors[0] if len(factors) == 1 else FactoredClassifier(tuple(factors))


def load_classifier(path: str | Path):
    path = Path(path)
    try:
        return classifier_from_json(path.read_text())
    except OSError as exc:
        raise InvalidInputError(f"cannot read classifier file {path}: {exc}") from exc


def save_classifier(classifier, path: str | Path, method: Optional[str] = None, value: Optional[float] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(classifier_to_json(classifier, method, value))
    return path
