"""
Exact information quantities and regret bounds for concept classifiers.

All logarithms are natural. The reference measure is
p(c, s, k, a) = p_C(c) * occupancy(s | c) * phi(k | s) * pi*(a | s, c),
with pi* the softened optimal policy of the solution.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.special import entr, rel_entr

from config import BOUND_MARGIN_TOL, PROB_TOL
from errors import InvalidInputError, SupportError
from services.cmdp import Policy, TabularCMDP
from services.solver import Solution, bellman_residual, evaluate_policy

logger = logging.getLogger(__name__)


def classifier_rows(classifier) -> np.ndarray:
    """(S, K) concept distribution of a classifier object or a raw row table."""
    rows = classifier.rows() if hasattr(classifier, "rows") else np.asarray(classifier, dtype=float)
    if rows.ndim != 2:
        raise InvalidInputError("classifier rows must be indexed (state, concept)")
    if np.any(rows < 0) or not np.all(np.abs(rows.sum(axis=1) - 1.0) <= PROB_TOL):
        raise InvalidInputError("classifier rows must be distributions over concepts")
    return rows


def _entropy(p: np.ndarray) -> float:
    return float(entr(p).sum())


def bits(nats: float) -> float:
    return nats / math.log(2.0)


# ── Joint model ────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class JointModel:
    """Factored joint over (context, state, concept, action)."""
    p_context: np.ndarray            # (C,)
    occupancy: np.ndarray            # (C, S)
    phi: np.ndarray                  # (S, K)
    policy: np.ndarray               # (C, S, A)

    @cached_property
    def probs(self) -> np.ndarray:
        return np.einsum("c,cs,sk,csa->cska", self.p_context, self.occupancy, self.phi, self.policy)

    @cached_property
    def state_weights(self) -> np.ndarray:
        """p(c, s)."""
        return self.p_context[:, None] * self.occupancy

    @cached_property
    def context_concept(self) -> np.ndarray:
        """p(c, k)."""
        return self.state_weights @ self.phi

    @cached_property
    def context_concept_action(self) -> np.ndarray:
        """p(c, k, a)."""
        return np.einsum("cs,sk,csa->cka", self.state_weights, self.phi, self.policy)

    @cached_property
    def concept_given_context(self) -> np.ndarray:
        """p(k | c); rows of zero-probability contexts are zero."""
        p_c = self.context_concept.sum(axis=1, keepdims=True)
        return np.divide(self.context_concept, p_c, out=np.zeros_like(self.context_concept), where=p_c > 0)

    @cached_property
    def state_given_concept(self) -> np.ndarray:
        """p(s | k, c), shape (C, K, S); zero where p(k, c) = 0."""
        joint = np.einsum("cs,sk->cks", self.state_weights, self.phi)
        mass = self.context_concept[:, :, None]
        return np.divide(joint, mass, out=np.zeros_like(joint), where=mass > 0)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.policy.shape[0], self.phi.shape[0], self.phi.shape[1], self.policy.shape[2]


def build_joint(cmdp: TabularCMDP, solution: Solution, classifier) -> JointModel:
    rows = classifier_rows(classifier)
    if rows.shape[0] != cmdp.n_states:
        raise InvalidInputError(f"classifier covers {rows.shape[0]} states, CMDP has {cmdp.n_states}")
    if solution.occupancy.shape != (cmdp.n_contexts, cmdp.n_states):
        raise InvalidInputError("solution does not match the CMDP")
    return JointModel(
        p_context=np.asarray(cmdp.p_context),
        occupancy=np.asarray(solution.occupancy),
        phi=rows,
        policy=np.asarray(solution.soft_optimal.probs),
    )


# ── Divergences and mutual information ────────────────────────────────

def kl_divergence(p, q, axis: int = -1):
    """KL(p || q) in nats along ``axis``; 0 log 0 = 0, p > 0 with q = 0 raises."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise InvalidInputError(f"distributions differ in shape: {p.shape} vs {q.shape}")
    terms = rel_entr(p, q)
    if np.any(np.isinf(terms)):
        raise SupportError("KL divergence undefined: p > 0 where q = 0")
    value = terms.sum(axis=axis)
    return float(value) if np.ndim(value) == 0 else value


def conditional_mi(joint: JointModel) -> float:
    """I(S : A | S_phi, C) = H(A | S_phi, C) - H(A | S, C)."""
    p_csa = joint.state_weights[:, :, None] * joint.policy
    h_a_given_kc = _entropy(joint.context_concept_action) - _entropy(joint.context_concept)
    h_a_given_sc = _entropy(p_csa) - _entropy(joint.state_weights)
    return max(h_a_given_kc - h_a_given_sc, 0.0)


def context_free_mi(joint: JointModel) -> float:
    """I(S : A | S_phi) with contexts marginalized before conditioning."""
    if joint.p_context.shape[0] == 1:
        return conditional_mi(joint)
    p_sa = np.einsum("cs,csa->sa", joint.state_weights, joint.policy)
    p_s = joint.state_weights.sum(axis=0)
    p_ka = joint.context_concept_action.sum(axis=0)
    p_k = joint.context_concept.sum(axis=0)
    value = (_entropy(p_ka) - _entropy(p_k)) - (_entropy(p_sa) - _entropy(p_s))
    return max(value, 0.0)


def mutual_information_state_action(joint: JointModel) -> float:
    """I(S : A | C), the value of the uninformative (constant) abstraction."""
    p_csa = joint.state_weights[:, :, None] * joint.policy
    p_ca = p_csa.sum(axis=1)
    value = (_entropy(p_ca) - _entropy(joint.p_context)) - (_entropy(p_csa) - _entropy(joint.state_weights))
    return max(value, 0.0)


def concept_diagnostics(joint: JointModel) -> tuple[float, float]:
    """(H(S_phi), I(S_phi : C)) in nats."""
    p_ck = joint.context_concept
    h_k = _entropy(p_ck.sum(axis=0))
    h_c = _entropy(p_ck.sum(axis=1))
    return h_k, max(h_k + h_c - _entropy(p_ck), 0.0)


# ── Abstract policies ──────────────────────────────────────────────────

def marginal_abstract_policy(joint: JointModel) -> np.ndarray:
    """
    pi_phi*(a | k, c) = sum_s pi*(a | s, c) p(s | k, c), shape (C, K, A).

    Concepts that never occur in a context get the uniform row.
    """
    n_cka = joint.context_concept_action
    mass = joint.context_concept[:, :, None]
    n_actions = n_cka.shape[2]
    uniform = np.full_like(n_cka, 1.0 / n_actions)
    rows = np.divide(n_cka, mass, out=uniform, where=mass > 0)
    return rows / rows.sum(axis=2, keepdims=True)


def lift_abstract_policy(classifier, abstract_policy: np.ndarray) -> Policy:
    """Agent policy pi(a | s, c) = sum_k phi(k | s) pi_phi(a | k, c)."""
    rows = classifier_rows(classifier)
    abstract_policy = np.asarray(abstract_policy, dtype=float)
    if abstract_policy.ndim != 3 or abstract_policy.shape[1] != rows.shape[1]:
        raise InvalidInputError(
            f"abstract policy shape {abstract_policy.shape} does not match {rows.shape[1]} concepts"
        )
    return Policy(np.einsum("sk,cka->csa", rows, abstract_policy))


def random_abstract_policy(n_contexts: int, n_concepts: int, n_actions: int, rng: np.random.Generator) -> np.ndarray:
    """Rows drawn uniformly from the simplex."""
    return rng.dirichlet(np.ones(n_actions), size=(n_contexts, n_concepts))


# ── KL regret bound ────────────────────────────────────────────────────

def lemma1_bound(cmdp: TabularCMDP, solution: Solution, policy, classifier=None) -> float:
    """
    F_M * E[KL(pi*(. | s, c) || pi_phi(. | s_phi, c))].

    With a classifier, ``policy`` is an abstract table (C, K, A) and the
    expectation runs over p_C * occupancy * phi. Without one it is a state
    level ``Policy`` and the expectation runs over p_C * occupancy.
    """
    reference = np.asarray(solution.soft_optimal.probs)
    weights = cmdp.p_context[:, None] * solution.occupancy
    if classifier is None:
        probs = policy.probs if isinstance(policy, Policy) else np.asarray(policy, dtype=float)
        if probs.shape != reference.shape:
            raise InvalidInputError(f"policy shape {probs.shape} does not match {reference.shape}")
        terms = rel_entr(reference, probs).sum(axis=2)
        mass = weights
    else:
        rows = classifier_rows(classifier)
        abstract = np.asarray(policy, dtype=float)
        if abstract.shape != (cmdp.n_contexts, rows.shape[1], cmdp.n_actions):
            raise InvalidInputError(f"abstract policy shape {abstract.shape} does not match the classifier")
        terms = rel_entr(reference[:, :, None, :], abstract[:, None, :, :]).sum(axis=3)   # (C, S, K)
        mass = weights[:, :, None] * rows[None, :, :]
    live = mass > 0
    if np.any(np.isinf(terms[live])):
        raise SupportError("KL regret bound undefined: policy has zero mass on an optimal action")
    expectation = float(np.sum(np.where(live, terms, 0.0) * mass))
    return solution.f_constant * expectation


# ── Coupling and dissimilarity bounds ──────────────────────────────────

def dissimilarity_matrix(solution: Solution) -> np.ndarray:
    """D[c, s, s'] = KL(pi*(. | s, c) || pi*(. | s', c)); inf marks a support gap."""
    probs = np.asarray(solution.soft_optimal.probs)
    return rel_entr(probs[:, :, None, :], probs[:, None, :, :]).sum(axis=3)


def behavior_dissimilarity(solution: Solution, s: int, s_prime: int, context: int) -> float:
    probs = solution.soft_optimal.probs
    return kl_divergence(probs[context, s], probs[context, s_prime])


def coupling_matrix(joint: JointModel) -> np.ndarray:
    """J[c, s, s'] = sum_k phi(k | s) phi(k | s') / p(k | c), zero-probability concepts excluded."""
    p_k = joint.concept_given_context
    inverse = np.divide(1.0, p_k, out=np.zeros_like(p_k), where=p_k > 0)
    shared = joint.phi[:, None, :] * joint.phi[None, :, :]           # (S, S, K)
    if np.any((p_k == 0)[:, None, None, :] & (shared[None] > 0)):
        logger.debug("Coupling excludes concepts with zero probability in some context")
    return np.einsum("stk,ck->cst", shared, inverse)


def coupling(joint: JointModel, s: int, s_prime: int, context: int) -> float:
    p_k = joint.concept_given_context[context]
    shared = joint.phi[s] * joint.phi[s_prime]
    excluded = (p_k == 0) & (shared > 0)
    if np.any(excluded):
        logger.warning(
            "Concepts %s share support for states (%d, %d) but never occur in context %d; excluded",
            np.nonzero(excluded)[0].tolist(), s, s_prime, context,
        )
    return float(np.sum(np.divide(shared, p_k, out=np.zeros_like(shared), where=p_k > 0)))


def theorem2_bound(cmdp: TabularCMDP, solution: Solution, classifier) -> float:
    """E_C E_{S, S' iid ~ occupancy(. | c)} [J(s, s' | c) D(s, s' | c)]."""
    joint = build_joint(cmdp, solution, classifier)
    couple = coupling_matrix(joint)
    dissim = dissimilarity_matrix(solution)
    occ = solution.occupancy
    weights = cmdp.p_context[:, None, None] * occ[:, :, None] * occ[:, None, :] * couple
    live = weights > 0
    if np.any(np.isinf(dissim[live])):
        raise SupportError("coupling bound undefined: coupled states with disjoint action support")
    return float(np.sum(np.where(live, dissim, 0.0) * weights))


def _hard_rows(classifier) -> np.ndarray:
    if hasattr(classifier, "hard_rows"):
        return classifier.hard_rows()
    rows = classifier_rows(classifier)
    if not np.all((rows == 0) | (rows == 1)):
        raise InvalidInputError("max-dissimilarity bound needs a deterministic classifier")
    return rows


def corollary1_bound(
    test_cmdp: TabularCMDP, test_solution: Solution, train_classifier
) -> tuple[float, Optional[tuple[int, int, int]]]:
    """
    Largest test-time behavior dissimilarity over state pairs the training
    classifier couples in some context. Returns (bound, (s, s', c)); the
    witness is the first maximizer in (c, s, s') order.
    """
    rows = _hard_rows(train_classifier)
    joint = build_joint(test_cmdp, test_solution, rows)
    coupled = coupling_matrix(joint) > 0
    coupled &= (test_cmdp.p_context > 0)[:, None, None]
    if not np.any(coupled):
        return 0.0, None
    dissim = dissimilarity_matrix(test_solution)
    candidates = np.where(coupled, dissim, -np.inf)
    best = float(candidates.max())
    flat = int(np.flatnonzero(candidates.ravel() >= best)[0])
    c, s, s_prime = np.unravel_index(flat, candidates.shape)
    return best, (int(s), int(s_prime), int(c))


# ── Bound report ───────────────────────────────────────────────────────

@dataclass
class BoundReport:
    classifier: str
    f_constant: float
    regret: float
    regret_sq_over_f: float
    lemma1_bound: float
    theorem1_mi: float
    theorem2_bound: float
    corollary1_bound: float
    corollary1_witness: Optional[tuple[int, int, int]]
    bellman_residual: float
    margins: dict[str, float] = field(default_factory=dict)
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def abstraction_regret(cmdp: TabularCMDP, solution: Solution, classifier, reference: Optional[Policy] = None) -> float:
    """Regret of the best abstract policy under ``classifier``, lifted back to states."""
    joint = build_joint(cmdp, solution, classifier)
    lifted = lift_abstract_policy(joint.phi, marginal_abstract_policy(joint))
    reference = solution.greedy if reference is None else reference
    return evaluate_policy(cmdp, reference) - evaluate_policy(cmdp, lifted)


def bound_report(
    cmdp: TabularCMDP,
    solution: Solution,
    classifier,
    name: str = "classifier",
    train_classifier=None,
    margin_tol: float = BOUND_MARGIN_TOL,
) -> BoundReport:
    """
    Evaluate the regret chain for one classifier:
    regret^2 / F_M <= I(S:A|S_phi,C) <= KL regret bound / F_M, the coupling
    bound on I, and the max-dissimilarity bound on the hardened classifier's I.
    Regret is measured against the softened optimum and clipped at 0.
    """
    joint = build_joint(cmdp, solution, classifier)
    f_m = solution.f_constant
    mi = conditional_mi(joint)
    marginal = marginal_abstract_policy(joint)
    lifted = lift_abstract_policy(joint.phi, marginal)
    loss = max(evaluate_policy(cmdp, solution.soft_optimal) - evaluate_policy(cmdp, lifted), 0.0)
    regret_sq_over_f = loss ** 2 / f_m if f_m > 0 else 0.0
    lemma1 = lemma1_bound(cmdp, solution, marginal, joint.phi)
    t2 = theorem2_bound(cmdp, solution, joint.phi)

    hard = _hard_rows(train_classifier if train_classifier is not None else classifier)
    c1, witness = corollary1_bound(cmdp, solution, hard)
    hard_mi = conditional_mi(build_joint(cmdp, solution, hard))

    margins = {
        "regret_vs_mi": mi - regret_sq_over_f,
        "mi_vs_lemma1": (lemma1 / f_m - mi) if f_m > 0 else 0.0,
        "mi_vs_theorem2": t2 - mi,
        "hard_mi_vs_corollary1": c1 - hard_mi,
    }
    violations = [f"{name}: {key} margin {value:.3e}" for key, value in margins.items() if value < -margin_tol]
    for message in violations:
        logger.warning("Bound violation %s", message)

    return BoundReport(
        classifier=name,
        f_constant=f_m,
        regret=loss,
        regret_sq_over_f=regret_sq_over_f,
        lemma1_bound=lemma1,
        theorem1_mi=mi,
        theorem2_bound=t2,
        corollary1_bound=c1,
        corollary1_witness=witness,
        bellman_residual=bellman_residual(cmdp, solution.q_values),
        margins=margins,
        violations=violations,
    )
