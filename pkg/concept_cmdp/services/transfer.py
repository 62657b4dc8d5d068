"""
Transfer experiments, raw-state baselines, transfer metrics and the
randomized bound-verification suite.
"""

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from config import BOUND_MARGIN_TOL
from errors import InvalidInputError, SupportError
from schemas import (
    BoundReportModel, CheckSummary, CurveSummary, DiagnosticsModel, ExperimentConfig, LearnConfig,
    MCConfig, SuiteReportModel, ThresholdModel, TransferMetricsModel, TransferReportModel,
)
from services.cmdp import Policy, TabularCMDP, build_random_cmdp, default_horizon, sample_episode
from services.info import (
    BoundReport, abstraction_regret, bound_report, build_joint, classifier_rows, concept_diagnostics,
    lemma1_bound, lift_abstract_policy, marginal_abstract_policy, random_abstract_policy,
)
from services.learner import (
    ConceptClassifier, baseline_context_free, baseline_likelihood, collect_triples, learn_exhaustive,
    learn_factored, learn_gradient, learn_local_search, objective, random_likelihood_policy,
)
from services.rng import Stream, derive_seeds, draw_from_cdf, make_rng
from services.solver import Solution, bellman_residual, evaluate_policy, solve
from services.trmc import LearningCurve, run_trmc, ExpectedReturn

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ("episode", "seed", "context", "return", "steps", "expected_return")


# ── Raw-state Monte Carlo control ──────────────────────────────────────

def _prior_kappa(weight: float, hold: float, episode: int, budget: int) -> float:
    if budget <= 0 or weight == 0.0:
        return 0.0
    fraction = episode / budget
    if fraction <= hold:
        return weight
    return weight * (1.0 - fraction) / (1.0 - hold)


def _mc_control(cmdp: TabularCMDP, prior: np.ndarray, config: MCConfig, prior_weight: float) -> LearningCurve:
    """
    Every-visit epsilon-soft Monte Carlo control on raw states. Exploration
    draws come from ``prior`` and greedy improvement maximizes
    Q + kappa log prior. Kappa stays at ``prior_weight`` for the first
    ``prior_hold`` share of the budget, then falls linearly to zero.
    """
    budget = config.episode_budget
    horizon = config.horizon or default_horizon(cmdp.gamma)
    rng = make_rng(config.seed, Stream.MONTE_CARLO)
    context_cdf = np.cumsum(cmdp.p_context)
    log_prior = np.log(prior)
    eye = np.eye(cmdp.n_actions)
    q = np.zeros_like(prior)
    counts = np.zeros_like(prior)
    expected = ExpectedReturn(cmdp, config.eval_period)
    curve = LearningCurve(seed=config.seed)

    def behavior(episode: int) -> tuple[Policy, np.ndarray]:
        fraction = episode / max(budget - 1, 1)
        epsilon = config.epsilon_start + (config.epsilon_end - config.epsilon_start) * fraction
        kappa = _prior_kappa(prior_weight, config.prior_hold, episode, budget)
        greedy = eye[np.argmax(q + kappa * log_prior, axis=2)]
        return Policy((1.0 - epsilon) * greedy + epsilon * prior), greedy

    for episode in range(budget):
        context = draw_from_cdf(context_cdf, rng.random())
        episode_seed = int(rng.integers(0, 2**31 - 1))
        acting, _ = behavior(episode)
        trajectory = sample_episode(cmdp, acting, context, episode_seed, horizon)
        curve.record(trajectory, cmdp.gamma, expected(episode, acting))

        g = 0.0
        for step in reversed(trajectory.steps):
            g = step.reward + cmdp.gamma * g
            counts[context, step.state, step.action] += 1
            q[context, step.state, step.action] += (g - q[context, step.state, step.action]) / counts[
                context, step.state, step.action
            ]
        if (episode + 1) % 100 == 0:
            logger.debug("Monte Carlo episode %d/%d", episode + 1, budget)

    _, greedy = behavior(max(budget - 1, 0))
    curve.final_policy = Policy(greedy)
    return curve


def run_baseline_mc(cmdp: TabularCMDP, config: Optional[MCConfig] = None) -> LearningCurve:
    """Epsilon-soft Monte Carlo control with uniform exploration."""
    config = config or MCConfig()
    uniform = np.full((cmdp.n_contexts, cmdp.n_states, cmdp.n_actions), 1.0 / cmdp.n_actions)
    return _mc_control(cmdp, uniform, config, prior_weight=0.0)


def run_prior_guided(
    cmdp: TabularCMDP, classifier, abstract_policy: np.ndarray, config: Optional[MCConfig] = None
) -> LearningCurve:
    """
    Monte Carlo control guided by an abstract policy: explore with
    pi_phi(. | phi(s), c) and add ``config.prior_weight`` * log pi_phi to Q
    when improving, the weight held and then annealed to zero.
    """
    config = config or MCConfig()
    prior = lift_abstract_policy(classifier_rows(classifier), abstract_policy).probs
    if prior.shape != (cmdp.n_contexts, cmdp.n_states, cmdp.n_actions):
        raise InvalidInputError("prior does not match the CMDP")
    if np.any(prior <= 0):
        raise SupportError("behavior prior needs full support")
    return _mc_control(cmdp, np.asarray(prior), config, prior_weight=config.prior_weight)


# ── Transfer metrics ───────────────────────────────────────────────────

@dataclass(frozen=True)
class ThresholdResult:
    fraction: float
    threshold: float
    baseline_episodes: Optional[int]
    treatment_episodes: Optional[int]

    @property
    def reached(self) -> bool:
        return self.baseline_episodes is not None and self.treatment_episodes is not None

    @property
    def ratio(self) -> Optional[float]:
        """Baseline over treatment episodes; None means not reached."""
        if not self.reached:
            return None
        return self.baseline_episodes / self.treatment_episodes

    def to_model(self) -> ThresholdModel:
        return ThresholdModel(
            fraction=self.fraction,
            threshold=self.threshold,
            baseline_episodes=self.baseline_episodes,
            treatment_episodes=self.treatment_episodes,
            ratio=self.ratio,
            status="reached" if self.reached else "not_reached",
        )


@dataclass(frozen=True)
class TransferMetrics:
    jumpstart: float
    asymptotic_gap: float
    time_to_threshold: tuple[ThresholdResult, ...]

    def to_model(self) -> TransferMetricsModel:
        return TransferMetricsModel(
            jumpstart=self.jumpstart,
            asymptotic_gap=self.asymptotic_gap,
            time_to_threshold=[t.to_model() for t in self.time_to_threshold],
        )


def _mean_curve(curves) -> np.ndarray:
    array = np.asarray(curves, dtype=float)
    if array.ndim == 1:
        return array
    if array.ndim != 2:
        raise InvalidInputError("curves must be (episodes,) or (seeds, episodes)")
    return array.mean(axis=0)


def _episodes_to(curve: np.ndarray, threshold: float) -> Optional[int]:
    hits = np.flatnonzero(curve >= threshold)
    return int(hits[0]) + 1 if hits.size else None


def transfer_metrics(
    baseline, treatment, thresholds: Sequence[float] = (0.5, 0.8), windows: tuple[int, int] = (5, 10)
) -> TransferMetrics:
    """
    Jumpstart (treatment minus baseline over the first E0 episodes),
    asymptotic gap (baseline minus treatment over the last Ea) and
    time-to-threshold ratios. A threshold at fraction f sits f of the way
    from the worst to the best episode of the baseline mean curve, so it is
    well defined for negative returns; f > 1 is never reached.
    """
    base, treat = _mean_curve(baseline), _mean_curve(treatment)
    if base.shape != treat.shape:
        raise InvalidInputError(f"curves differ in length: {base.shape[0]} vs {treat.shape[0]}")
    if base.size == 0:
        raise InvalidInputError("curves are empty")
    start, end = windows
    if start < 1 or end < 1:
        raise InvalidInputError("metric windows must be >= 1")

    jumpstart = float(treat[:start].mean() - base[:start].mean())
    asymptotic_gap = float(base[-end:].mean() - treat[-end:].mean())
    worst, best = float(base.min()), float(base.max())
    results = []
    for fraction in thresholds:
        threshold = worst + fraction * (best - worst)
        if fraction <= 1.0:
            threshold = min(threshold, best)
        base_hit = _episodes_to(base, threshold) if fraction <= 1.0 else None
        results.append(ThresholdResult(
            fraction=float(fraction),
            threshold=threshold,
            baseline_episodes=base_hit,
            treatment_episodes=_episodes_to(treat, threshold) if base_hit is not None else None,
        ))
    return TransferMetrics(jumpstart, asymptotic_gap, tuple(results))


def curve_summary(curves: list[LearningCurve]) -> CurveSummary:
    """Mean and standard error (sample std / sqrt(n)) of the expected-return curves."""
    matrix = np.array([c.expected_returns for c in curves], dtype=float)
    n = matrix.shape[0]
    stderr = matrix.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(matrix.shape[1])
    return CurveSummary(n_seeds=n, mean=matrix.mean(axis=0).tolist(), stderr=stderr.tolist())


def curves_to_csv(curves: list[LearningCurve]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CURVE_COLUMNS)
    for curve in curves:
        for episode, (context, ret, steps, expected) in enumerate(
            zip(curve.contexts, curve.returns, curve.steps, curve.expected_returns)
        ):
            writer.writerow([episode, curve.seed, context, repr(float(ret)), steps, repr(float(expected))])
    return buffer.getvalue()


# ── Concept learning dispatch ──────────────────────────────────────────

def learn_concepts(
    cmdp: TabularCMDP,
    solution: Solution,
    n_concepts: int,
    config: LearnConfig,
    factor_sizes: Optional[Sequence[int]] = None,
):
    """Run the configured learner; returns (classifier, objective)."""
    if factor_sizes:
        return learn_factored(cmdp, solution, factor_sizes, config)
    if config.method == "exhaustive":
        return learn_exhaustive(cmdp, solution, n_concepts)
    if config.method == "local_search":
        return learn_local_search(cmdp, solution, n_concepts, config)
    classifier, _ = learn_gradient(cmdp, solution, n_concepts, config)
    return classifier, objective(cmdp, solution, classifier)


# ── Transfer experiment ────────────────────────────────────────────────

@dataclass
class TransferReport:
    seed: int
    seeds: list[int]
    n_concepts: int
    train_objective: float
    curves: dict[str, list[LearningCurve]]
    metrics: dict[str, TransferMetrics]
    bound_report: BoundReport
    diagnostics: tuple[float, float]
    classifier: object = None

    def to_model(self) -> TransferReportModel:
        return TransferReportModel(
            seed=self.seed,
            seeds=self.seeds,
            n_concepts=self.n_concepts,
            train_objective=self.train_objective,
            curves={name: curve_summary(runs) for name, runs in self.curves.items()},
            metrics={name: m.to_model() for name, m in self.metrics.items()},
            bound_report=bound_report_model(self.bound_report),
            diagnostics=DiagnosticsModel(concept_entropy=self.diagnostics[0], concept_context_mi=self.diagnostics[1]),
        )


def bound_report_model(report: BoundReport) -> BoundReportModel:
    return BoundReportModel(
        classifier=report.classifier,
        f_constant=report.f_constant,
        regret=report.regret,
        regret_sq_over_f=report.regret_sq_over_f,
        lemma1_bound=report.lemma1_bound,
        theorem1_mi=report.theorem1_mi,
        theorem2_bound=report.theorem2_bound,
        corollary1_bound=report.corollary1_bound,
        corollary1_witness=None if report.corollary1_witness is None else list(report.corollary1_witness),
        bellman_residual=report.bellman_residual,
        margins=report.margins,
        violations=report.violations,
    )


def _check_shapes(train: TabularCMDP, test: TabularCMDP):
    if train.shape() != test.shape():
        raise InvalidInputError(
            "train and test CMDPs must share state, action and context sets: "
            f"(S, A, C) = {train.shape()} vs {test.shape()}"
        )


def transfer_experiment(
    train_cmdp: TabularCMDP, test_cmdp: TabularCMDP, config: ExperimentConfig, threads: int = 1
) -> TransferReport:
    """
    Solve train, learn concepts there, then learn on test with the raw
    Monte Carlo baseline, TRMC over the concepts and/or prior-guided
    Monte Carlo. Every seed derives from ``config.seed``.
    """
    _check_shapes(train_cmdp, test_cmdp)
    if "trmc" in config.methods and config.trmc.episode_budget != config.mc.episode_budget:
        raise InvalidInputError("trmc and mc episode budgets must match for curve comparison")

    train_solution = solve(train_cmdp)
    learner = config.learner.model_copy(update={"seed": config.seed})
    classifier, train_objective = learn_concepts(
        train_cmdp, train_solution, config.n_concepts, learner, config.factor_sizes
    )
    logger.info("Learned %d concepts on train: objective %.6g", classifier.n_concepts, train_objective)

    train_joint = build_joint(train_cmdp, train_solution, classifier)
    prior = marginal_abstract_policy(train_joint)
    diagnostics = concept_diagnostics(train_joint)

    test_solution = solve(test_cmdp)
    report = bound_report(test_cmdp, test_solution, classifier, name=config.learner.method)

    seeds = derive_seeds(config.seed, config.n_seeds)

    def run_seed(seed: int) -> dict[str, LearningCurve]:
        mc = config.mc.model_copy(update={"seed": seed})
        runs = {"baseline": run_baseline_mc(test_cmdp, mc)}
        if "trmc" in config.methods:
            _, runs["trmc"] = run_trmc(test_cmdp, classifier, config.trmc.model_copy(update={"seed": seed}))
        if "prior" in config.methods:
            runs["prior"] = run_prior_guided(test_cmdp, classifier, prior, mc)
        return runs

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_seed = list(pool.map(run_seed, seeds))
    else:
        per_seed = [run_seed(seed) for seed in seeds]

    curves = {name: [runs[name] for runs in per_seed] for name in per_seed[0]}
    baseline = [c.expected_returns for c in curves["baseline"]]
    windows = (config.jumpstart_window, config.asymptotic_window)
    metrics = {
        name: transfer_metrics(baseline, [c.expected_returns for c in runs], config.thresholds, windows)
        for name, runs in curves.items() if name != "baseline"
    }
    return TransferReport(
        seed=config.seed,
        seeds=seeds,
        n_concepts=classifier.n_concepts,
        train_objective=train_objective,
        curves=curves,
        metrics=metrics,
        bound_report=report,
        diagnostics=diagnostics,
        classifier=classifier,
    )


# ── Ablation comparison ────────────────────────────────────────────────

def compare_concept_metrics(
    train_cmdp: TabularCMDP,
    test_cmdp: TabularCMDP,
    n_concepts: int,
    seeds: Sequence[int],
    config: Optional[LearnConfig] = None,
    n_triples_episodes: int = 200,
) -> dict[str, list[float]]:
    """
    Test regret of the best abstract policy under concepts learned on train
    by the conditional objective, the context-free objective and the
    likelihood metric, one entry per seed.
    """
    _check_shapes(train_cmdp, test_cmdp)
    config = config or LearnConfig()
    train_solution, test_solution = solve(train_cmdp), solve(test_cmdp)
    results: dict[str, list[float]] = {"conditional": [], "context_free": [], "likelihood": []}
    for seed in seeds:
        seeded = config.model_copy(update={"seed": seed})
        conditional, _ = learn_gradient(train_cmdp, train_solution, n_concepts, seeded)
        context_free, _ = baseline_context_free(train_cmdp, train_solution, n_concepts, seeded)
        triples = collect_triples(train_cmdp, train_solution.soft_optimal, n_triples_episodes, seed)
        fixed = random_likelihood_policy(train_cmdp.n_contexts, n_concepts, train_cmdp.n_actions, seed)
        likely, _ = baseline_likelihood(triples, n_concepts, fixed, seeded, n_states=train_cmdp.n_states)
        for name, classifier in (("conditional", conditional), ("context_free", context_free), ("likelihood", likely)):
            results[name].append(abstraction_regret(test_cmdp, test_solution, classifier))
    return results


# ── Bound verification suite ───────────────────────────────────────────

@dataclass
class _Check:
    checked: int = 0
    violations: int = 0
    worst_margin: Optional[float] = None

    def add(self, margin: float, tol: float) -> bool:
        self.checked += 1
        self.worst_margin = margin if self.worst_margin is None else min(self.worst_margin, margin)
        if margin < -tol:
            self.violations += 1
            return False
        return True


CHECKS = ("lemma1", "theorem1", "theorem1_argmin", "theorem2", "corollary1", "bellman")


@dataclass
class SuiteReport:
    n_instances: int
    n_states: int
    n_actions: int
    n_contexts: int
    gamma: float
    seed: int
    margin_tol: float
    checks: dict[str, _Check] = field(default_factory=lambda: {name: _Check() for name in CHECKS})
    violations: list[str] = field(default_factory=list)

    @property
    def total_violations(self) -> int:
        return sum(c.violations for c in self.checks.values())

    def to_model(self) -> SuiteReportModel:
        return SuiteReportModel(
            n_instances=self.n_instances,
            n_states=self.n_states,
            n_actions=self.n_actions,
            n_contexts=self.n_contexts,
            gamma=self.gamma,
            seed=self.seed,
            margin_tol=self.margin_tol,
            checks={
                name: CheckSummary(checked=c.checked, violations=c.violations, worst_margin=c.worst_margin)
                for name, c in self.checks.items()
            },
            total_violations=self.total_violations,
            violations=self.violations,
        )


def _suite_classifiers(cmdp: TabularCMDP, solution: Solution, n_concepts: int, seed: int) -> dict:
    rng = make_rng(seed, Stream.SUITE, 1)
    n_states = cmdp.n_states
    learned, _ = learn_local_search(
        cmdp, solution, n_concepts, LearnConfig(method="local_search", seed=seed, restarts=4)
    )
    return {
        "identity": ConceptClassifier.identity(n_states),
        "constant": ConceptClassifier.constant(n_states),
        "random": ConceptClassifier(rng.normal(0.0, 2.0, size=(n_states, n_concepts)), 1.0, "soft"),
        "learned": learned,
    }


def verify_solution(cmdp: TabularCMDP, solution: Solution, tol: float = 1e-8) -> list[str]:
    """Violations of Bellman optimality for a supplied solution."""
    residual = bellman_residual(cmdp, solution.q_values)
    messages = []
    if residual > tol:
        messages.append(f"bellman residual {residual:.3e} exceeds {tol:.1e}")
    v_gap = float(np.max(np.abs(solution.v_values - solution.q_values.max(axis=2))))
    if v_gap > tol:
        messages.append(f"v differs from max_a q by {v_gap:.3e}")
    return messages


def _verify_instance(
    index: int, seed: int, n_states: int, n_actions: int, n_contexts: int, gamma: float,
    n_concepts: int, n_policies: int, margin_tol: float,
) -> list[tuple[str, float, str]]:
    """All (check, margin, message) rows for one random instance."""
    cmdp = build_random_cmdp(n_states, n_actions, n_contexts, gamma, seed)
    solution = solve(cmdp)
    f_m = solution.f_constant
    rng = make_rng(seed, Stream.SUITE, 2)
    rows: list[tuple[str, float, str]] = []

    residual = bellman_residual(cmdp, solution.q_values)
    rows.append(("bellman", 1e-8 - residual, f"instance {index}: bellman residual {residual:.3e}"))

    reference = evaluate_policy(cmdp, solution.soft_optimal)
    for p in range(n_policies // 10):
        policy = Policy(rng.dirichlet(np.ones(n_actions), size=(n_contexts, n_states)))
        loss = max(reference - evaluate_policy(cmdp, policy), 0.0)
        margin = lemma1_bound(cmdp, solution, policy) - loss ** 2
        rows.append(("lemma1", margin / f_m, f"instance {index} policy {p}: KL regret bound margin {margin:.3e}"))

    for name, classifier in _suite_classifiers(cmdp, solution, n_concepts, seed).items():
        label = f"instance {index} {name}"
        report = bound_report(cmdp, solution, classifier, name=name, margin_tol=margin_tol)
        rows.append(("theorem1", report.margins["regret_vs_mi"], f"{label}: regret^2/F exceeds I"))
        rows.append(("theorem2", report.margins["mi_vs_theorem2"], f"{label}: I exceeds the coupling bound"))
        rows.append(("corollary1", report.margins["hard_mi_vs_corollary1"], f"{label}: I exceeds the max dissimilarity"))

        phi = classifier_rows(classifier)
        identity_gap = abs(report.lemma1_bound - f_m * report.theorem1_mi)
        rows.append(("theorem1_argmin", -identity_gap / f_m, f"{label}: marginal bound differs from F*I"))
        for _ in range(n_policies):
            candidate = random_abstract_policy(n_contexts, phi.shape[1], n_actions, rng)
            bound = lemma1_bound(cmdp, solution, candidate, phi)
            rows.append((
                "theorem1_argmin", (bound - report.lemma1_bound) / f_m,
                f"{label}: a random abstract policy beats the marginal",
            ))
    return rows


def verify_bounds_suite(
    n_instances: int,
    n_states: int = 6,
    n_actions: int = 3,
    n_contexts: int = 2,
    gamma: float = 0.9,
    seed: int = 0,
    n_concepts: int = 2,
    n_policies: int = 200,
    margin_tol: float = BOUND_MARGIN_TOL,
    threads: int = 1,
) -> SuiteReport:
    """
    Check the regret chain on random CMDPs for identity, constant, random
    soft and learned classifiers. Margins are reported in mutual
    information units (divided by F_M where the bound carries it).
    """
    if n_instances < 0:
        raise InvalidInputError("n_instances must be >= 0")
    seeds = derive_seeds(seed, n_instances, Stream.SUITE)
    run = lambda pair: _verify_instance(  # noqa: E731
        pair[0], pair[1], n_states, n_actions, n_contexts, gamma, n_concepts, n_policies, margin_tol,
    )
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, enumerate(seeds)))
    else:
        results = [run(pair) for pair in enumerate(seeds)]

    report = SuiteReport(n_instances, n_states, n_actions, n_contexts, gamma, seed, margin_tol)
    for rows in results:
        for check, margin, message in rows:
            if not report.checks[check].add(margin, margin_tol):
                report.violations.append(f"{message} (margin {margin:.3e})")
    logger.info("Verified %d instances: %d violations", n_instances, report.total_violations)
    return report
