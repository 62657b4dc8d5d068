import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from errors import CapabilityError, InvalidInputError
from schemas import LearnConfig
from services.cmdp import build_random_cmdp
from services.info import build_joint, conditional_mi
from services.solver import solve
from services.learner import (
    ConceptClassifier, FactoredClassifier, baseline_context_free, baseline_likelihood, classifier_from_json,
    classifier_to_json, collect_triples, learn_exhaustive, learn_factored, learn_gradient, learn_local_search,
    likelihood, load_classifier, objective, objective_gradient, random_likelihood_policy, save_classifier,
)


def _same_partition(assignment, expected):
    a, b = np.asarray(assignment), np.asarray(expected)
    return all((a[i] == a[j]) == (b[i] == b[j]) for i in range(len(a)) for j in range(len(a)))


# ── Classifiers ────────────────────────────────────────────────────────

def test_hard_classifier_rows():
    classifier = ConceptClassifier.from_assignment([1, 0, 1], 2)
    np.testing.assert_array_equal(classifier.rows(), [[0, 1], [1, 0], [0, 1]])
    np.testing.assert_array_equal(classifier.permuted([1, 0]).hard_assignment(), [0, 1, 0])
    assert ConceptClassifier.constant(3).rows().shape == (3, 1)
    with pytest.raises(InvalidInputError):
        ConceptClassifier.from_assignment([0, 2], 2)


def test_soft_rows_follow_the_temperature():
    logits = np.array([[1.0, 0.0]])
    warm = ConceptClassifier(logits, 1.0).soft_rows()
    cold = ConceptClassifier(logits, 0.1).soft_rows()
    assert cold[0, 0] > warm[0, 0]
    np.testing.assert_allclose(warm.sum(axis=1), 1.0)
    with pytest.raises(InvalidInputError):
        ConceptClassifier(logits, 0.0)
    with pytest.raises(InvalidInputError):
        ConceptClassifier(np.array([[np.inf, 0.0]]))


def test_factored_concepts_are_row_major():
    a = ConceptClassifier.from_assignment([0, 1, 1], 2)
    b = ConceptClassifier.from_assignment([2, 0, 1], 3)
    product = FactoredClassifier((a, b))
    assert product.n_concepts == 6
    assert product.factor_sizes == [2, 3]
    np.testing.assert_array_equal(product.hard_assignment(), [2, 3, 4])
    np.testing.assert_array_equal(product.rows().argmax(axis=1), [2, 3, 4])


def test_factored_soft_rows_are_distributions():
    rng = np.random.default_rng(0)
    product = FactoredClassifier((
        ConceptClassifier(rng.normal(size=(4, 2))), ConceptClassifier(rng.normal(size=(4, 3))),
    ))
    rows = product.soft_rows()
    assert rows.shape == (4, 6)
    np.testing.assert_allclose(rows.sum(axis=1), 1.0)
    np.testing.assert_allclose(rows.reshape(4, 2, 3).sum(axis=2), product.factors[0].soft_rows())


def test_factors_must_agree():
    with pytest.raises(InvalidInputError):
        FactoredClassifier((ConceptClassifier.uniform(3, 2), ConceptClassifier.uniform(4, 2)))
    with pytest.raises(InvalidInputError):
        FactoredClassifier(())


# ── Objective ──────────────────────────────────────────────────────────

def _finite_difference(f, logits, h=1e-6):
    grad = np.zeros_like(logits)
    for idx in np.ndindex(*logits.shape):
        up, down = logits.copy(), logits.copy()
        up[idx] += h
        down[idx] -= h
        grad[idx] = (f(up) - f(down)) / (2 * h)
    return grad


def test_uniform_logits_are_a_stationary_point(swap, swap_solution, random_cmdp, random_solution):
    for cmdp, solution in ((swap, swap_solution), (random_cmdp, random_solution)):
        grad = objective_gradient(cmdp, solution, ConceptClassifier.uniform(cmdp.n_states, 2))
        np.testing.assert_allclose(grad, 0.0, atol=1e-9)


@given(seed=st.integers(0, 1_000), data=st.data())
@settings(max_examples=25, deadline=None)
def test_objective_ignores_concept_labels(seed, data):
    cmdp = build_random_cmdp(5, 2, 2, 0.9, seed)
    solution = solve(cmdp)
    assignment = data.draw(st.lists(st.integers(0, 2), min_size=5, max_size=5))
    permutation = data.draw(st.permutations(range(3)))
    classifier = ConceptClassifier.from_assignment(assignment, 3)
    value = objective(cmdp, solution, classifier)
    assert abs(objective(cmdp, solution, classifier.permuted(permutation)) - value) <= 1e-12


@given(seed=st.integers(0, 1_000), data=st.data())
@settings(max_examples=25, deadline=None)
def test_splitting_a_concept_never_raises_the_objective(seed, data):
    n_states = data.draw(st.integers(2, 6))
    cmdp = build_random_cmdp(n_states, 2, 2, 0.9, seed)
    solution = solve(cmdp)
    coarse = data.draw(st.lists(st.integers(0, 1), min_size=n_states, max_size=n_states))
    moved = data.draw(st.lists(st.booleans(), min_size=n_states, max_size=n_states))
    split = data.draw(st.integers(0, 1))
    fine = [2 if k == split and m else k for k, m in zip(coarse, moved)]
    before = objective(cmdp, solution, ConceptClassifier.from_assignment(coarse, 3))
    after = objective(cmdp, solution, ConceptClassifier.from_assignment(fine, 3))
    assert after <= before + 1e-12


@pytest.mark.parametrize("temperature", [1.0, 0.5])
def test_gradient_matches_finite_differences(random_cmdp, random_solution, temperature):
    logits = np.random.default_rng(4).normal(size=(6, 3))
    classifier = ConceptClassifier(logits, temperature)
    analytic = objective_gradient(random_cmdp, random_solution, classifier)
    numeric = _finite_difference(
        lambda x: objective(random_cmdp, random_solution, ConceptClassifier(x, temperature)), logits
    )
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


def test_factored_gradient_matches_finite_differences(random_cmdp, random_solution):
    rng = np.random.default_rng(6)
    blocks = [rng.normal(size=(6, 2)), rng.normal(size=(6, 2))]

    def value(first, second):
        return objective(random_cmdp, random_solution, FactoredClassifier((
            ConceptClassifier(first), ConceptClassifier(second),
        )))

    analytic = objective_gradient(
        random_cmdp, random_solution, FactoredClassifier(tuple(ConceptClassifier(b) for b in blocks))
    )
    np.testing.assert_allclose(
        analytic[0], _finite_difference(lambda x: value(x, blocks[1]), blocks[0]), rtol=1e-4, atol=1e-7
    )
    np.testing.assert_allclose(
        analytic[1], _finite_difference(lambda x: value(blocks[0], x), blocks[1]), rtol=1e-4, atol=1e-7
    )


# ── Exhaustive and local search ────────────────────────────────────────

def test_exhaustive_finds_the_car_types(rental, rental_solution):
    classifier, value = learn_exhaustive(rental, rental_solution, 2)
    np.testing.assert_array_equal(classifier.hard_assignment(), [0, 0, 1, 1])
    assert value == pytest.approx(0.0, abs=1e-12)
    assert classifier.mode == "hard"


def test_exhaustive_with_one_concept(rental, rental_solution):
    classifier, value = learn_exhaustive(rental, rental_solution, 1)
    assert classifier.n_concepts == 1
    assert value == pytest.approx(objective(rental, rental_solution, ConceptClassifier.constant(4)))


def test_exhaustive_limit(monkeypatch, rental, rental_solution):
    monkeypatch.setattr("services.learner.EXHAUSTIVE_LIMIT", 10)
    with pytest.raises(CapabilityError):
        learn_exhaustive(rental, rental_solution, 2)


def test_exhaustive_is_deterministic(rental, rental_solution):
    runs = [learn_exhaustive(rental, rental_solution, 2) for _ in range(2)]
    first, second = (classifier_to_json(classifier, "exhaustive", value) for classifier, value in runs)
    assert first == second


def test_local_search_reaches_zero(rental, rental_solution):
    classifier, value = learn_local_search(rental, rental_solution, 2, LearnConfig(method="local_search", seed=3))
    assert value == pytest.approx(0.0, abs=1e-12)
    assert _same_partition(classifier.hard_assignment(), [0, 0, 1, 1])


def test_local_search_from_a_given_start(rental, rental_solution):
    config = LearnConfig(method="local_search", restarts=1)
    classifier, value = learn_local_search(rental, rental_solution, 2, config, init=[0, 1, 0, 1])
    assert value == pytest.approx(0.0, abs=1e-12)
    assert _same_partition(classifier.hard_assignment(), [0, 0, 1, 1])
    with pytest.raises(InvalidInputError):
        learn_local_search(rental, rental_solution, 2, config, init=[0, 1, 2, 1])


@given(seed=st.integers(0, 1_000))
@settings(max_examples=15, deadline=None)
def test_local_search_never_beats_exhaustive(seed):
    cmdp = build_random_cmdp(5, 2, 2, 0.7, seed)
    solution = solve(cmdp)
    _, best = learn_exhaustive(cmdp, solution, 2)
    _, found = learn_local_search(cmdp, solution, 2, LearnConfig(method="local_search", seed=seed, restarts=2))
    assert found >= best - 1e-12


@pytest.mark.slow
def test_local_search_with_restarts_matches_exhaustive():
    matches = 0
    for seed in range(100):
        cmdp = build_random_cmdp(6, 2, 2, 0.9, seed)
        solution = solve(cmdp)
        _, best = learn_exhaustive(cmdp, solution, 3)
        _, found = learn_local_search(cmdp, solution, 3, LearnConfig(method="local_search", seed=seed, restarts=16))
        matches += abs(found - best) <= 1e-6
    assert matches >= 95


# ── Gradient descent ───────────────────────────────────────────────────

def test_gradient_learner_separates_the_cars(rental, rental_solution):
    successes = 0
    for seed in range(8):
        classifier, trace = learn_gradient(rental, rental_solution, 2, LearnConfig(seed=seed))
        assert all(later <= earlier + 1e-12 for earlier, later in zip(trace, trace[1:]))
        if objective(rental, rental_solution, classifier.harden()) < 1e-9:
            successes += 1
    assert successes >= 7


def test_gradient_learner_is_deterministic(rental, rental_solution):
    config = LearnConfig(seed=5, restarts=2, max_iters=100)
    a, _ = learn_gradient(rental, rental_solution, 2, config)
    b, _ = learn_gradient(rental, rental_solution, 2, config)
    assert classifier_to_json(a) == classifier_to_json(b)


def test_factored_learner(rental, rental_solution):
    classifier, value = learn_factored(rental, rental_solution, [2, 2], LearnConfig(restarts=2, max_iters=200))
    assert isinstance(classifier, FactoredClassifier)
    assert classifier.n_concepts == 4
    assert classifier.mode == "hard"
    assert value == pytest.approx(objective(rental, rental_solution, classifier))
    assert value <= objective(rental, rental_solution, ConceptClassifier.constant(4)) + 1e-12
    with pytest.raises(InvalidInputError):
        learn_factored(rental, rental_solution, [2, 0])


@pytest.mark.slow
def test_factored_concepts_on_cells_and_target_status(open_grid, open_grid_solution):
    _, factored = learn_factored(open_grid, open_grid_solution, [3, 3])
    flat, _ = learn_gradient(open_grid, open_grid_solution, 9)
    assert factored <= 1.1 * objective(open_grid, open_grid_solution, flat.harden())


def test_context_free_baseline_on_swapped_actions(swap, swap_solution):
    classifier, value = baseline_context_free(swap, swap_solution, 1)
    assert classifier.n_concepts == 1
    assert value == pytest.approx(0.0, abs=1e-12)
    # the conditional objective still sees the loss
    assert conditional_mi(build_joint(swap, swap_solution, classifier)) > 0.6


def test_context_free_concepts_lose_more_on_the_corridor(corridor, corridor_solution):
    config = LearnConfig(restarts=4, max_iters=300)
    conditional, _ = learn_gradient(corridor, corridor_solution, 3, config)
    pooled, _ = baseline_context_free(corridor, corridor_solution, 3, config)
    assert objective(corridor, corridor_solution, pooled.harden()) > objective(
        corridor, corridor_solution, conditional.harden()
    )


# ── Likelihood baseline ────────────────────────────────────────────────

def test_collect_triples(rental, rental_solution):
    triples = collect_triples(rental, rental_solution.soft_optimal, 50, seed=1)
    assert len(triples) == 50
    assert triples == collect_triples(rental, rental_solution.soft_optimal, 50, seed=1)
    assert {c for c, _, _ in triples} == {0, 1}
    assert all(0 <= s < 4 and 0 <= a < 2 for _, s, a in triples)


def test_likelihood_value():
    triples = [(0, 0, 0), (0, 1, 1), (0, 1, 1)]
    abstract = np.array([[[0.8, 0.2], [0.3, 0.7]]])
    classifier = ConceptClassifier.from_assignment([0, 1], 2)
    expected = np.log(0.8) + 2 * np.log(0.7)
    assert likelihood(triples, classifier, abstract) == pytest.approx(expected)
    with pytest.raises(InvalidInputError):
        likelihood([(0, 2, 0)], classifier, abstract)


def test_likelihood_baseline(rental, rental_solution):
    triples = collect_triples(rental, rental_solution.soft_optimal, 200, seed=2)
    fixed = random_likelihood_policy(2, 2, 2, seed=2)
    config = LearnConfig(restarts=2, max_iters=200)
    classifier, log_likelihood = baseline_likelihood(triples, 2, fixed, config, n_states=4)
    assert classifier.n_states == 4
    assert classifier.mode == "hard"
    assert log_likelihood == pytest.approx(likelihood(triples, classifier, fixed))
    assert log_likelihood < 0
    with pytest.raises(InvalidInputError):
        baseline_likelihood(triples, 2, np.array([[[1.0, 0.0]] * 2] * 2), config, n_states=4)


# ── Classifier file ────────────────────────────────────────────────────

def test_classifier_file(tmp_path):
    product = FactoredClassifier((
        ConceptClassifier.from_assignment([0, 1, 1], 2), ConceptClassifier.from_assignment([2, 0, 1], 3),
    ))
    path = save_classifier(product, tmp_path / "phi.json", method="gradient", value=0.25)
    loaded = load_classifier(path)
    assert isinstance(loaded, FactoredClassifier)
    np.testing.assert_array_equal(loaded.hard_assignment(), product.hard_assignment())
    single = classifier_from_json(classifier_to_json(ConceptClassifier.from_assignment([1, 0], 2)))
    assert isinstance(single, ConceptClassifier)
    np.testing.assert_array_equal(single.hard_assignment(), [1, 0])


def test_invalid_classifier_file():
    text = classifier_to_json(ConceptClassifier.from_assignment([1, 0], 2)).replace('"n_concepts": 2', '"n_concepts": 3')
    with pytest.raises(InvalidInputError, match="factor_sizes"):
        classifier_from_json(text)
