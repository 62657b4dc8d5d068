import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from errors import InvalidInputError
from schemas import GridSpec
from services.cmdp import (
    COMBUSTION, ELECTRIC, GRID_ACTIONS, Policy, TabularCMDP, build_contextual_gridworld, build_random_cmdp,
    build_rental_car, default_horizon, from_json, grid_index, load_cmdp, sample_episode, save_cmdp, to_json,
    validate,
)
from services.solver import discounted_occupancy


def _two_state(**overrides):
    tables = dict(
        transitions=np.full((1, 2, 1, 2), 0.5),
        rewards=np.zeros((1, 2, 1)),
        p_context=np.ones(1),
        p_initial=np.array([[1.0, 0.0]]),
        gamma=0.5,
    )
    tables.update(overrides)
    return TabularCMDP(**tables)


# ── Validation ─────────────────────────────────────────────────────────

def test_well_formed_two_state_cmdp_has_no_violations():
    assert validate(_two_state()) == []


def test_transition_row_deficit_is_reported():
    transitions = np.full((1, 2, 1, 2), 0.5)
    transitions[0, 1, 0] = [0.5, 0.4]
    violations = validate(_two_state(transitions=transitions))
    assert len(violations) == 1
    assert violations[0].kind == "transition_sum"
    assert violations[0].index == (0, 1, 0)
    assert violations[0].magnitude == pytest.approx(0.1)


def test_discount_of_one_is_reported():
    messages = [v.message for v in validate(_two_state(gamma=1.0))]
    assert "discount not < 1" in messages


def test_shape_mismatch_is_rejected_at_construction():
    with pytest.raises(InvalidInputError, match="rewards"):
        _two_state(rewards=np.zeros((1, 3, 1)))


def test_policy_rows_must_sum_to_one():
    with pytest.raises(InvalidInputError):
        Policy(np.array([[[0.7, 0.7]]]))


# ── Builders ───────────────────────────────────────────────────────────

def test_rental_car_rewards_by_city(rental):
    assert rental.shape() == (4, 2, 2)
    assert rental.gamma == 0.0
    assert validate(rental) == []
    # c1: route a1 best everywhere
    assert np.all(rental.rewards[0].argmax(axis=1) == 0)
    # c2: electric cars take a2, combustion cars a1
    assert np.all(rental.rewards[1, list(ELECTRIC)].argmax(axis=1) == 1)
    assert np.all(rental.rewards[1, list(COMBUSTION)].argmax(axis=1) == 0)


def test_rental_car_single_city():
    c1 = build_rental_car(contexts=("c1",))
    assert c1.n_contexts == 1
    assert c1.p_context.tolist() == [1.0]
    with pytest.raises(InvalidInputError):
        build_rental_car(contexts=("c3",))


def test_restrict_contexts_renormalizes(rental):
    single = rental.restrict_contexts([1])
    assert single.n_contexts == 1
    assert single.p_context.tolist() == [1.0]
    assert single.context_labels == ("c2",)
    np.testing.assert_array_equal(single.rewards[0], rental.rewards[1])


def test_random_cmdp_is_reproducible():
    a = build_random_cmdp(5, 3, 2, 0.8, seed=3)
    b = build_random_cmdp(5, 3, 2, 0.8, seed=3)
    c = build_random_cmdp(5, 3, 2, 0.8, seed=4)
    np.testing.assert_array_equal(a.transitions, b.transitions)
    assert not np.array_equal(a.rewards, c.rewards)
    assert validate(a) == []


# ── Gridworld ──────────────────────────────────────────────────────────

def test_default_grid_shapes():
    spec = GridSpec(layout=["S...S", ".....", "..T..", ".....", "S...S"], tasks=["plain", "seek", "avoid"])
    grid = build_contextual_gridworld(spec)
    assert grid.shape() == (50, 4, 3)
    assert grid.action_labels == GRID_ACTIONS
    assert grid.state_labels[0] == "r0c0:present"
    assert grid.state_labels[25] == "r0c0:consumed"
    # start mass only on the four corners with the target present
    assert grid.p_initial[0].sum() == pytest.approx(1.0)
    assert np.count_nonzero(grid.p_initial[0]) == 4
    assert np.all(grid.p_initial[0, 25:] == 0)


def test_target_rewards_and_consumption():
    grid = build_contextual_gridworld(GridSpec(layout=["ST"], tasks=["seek", "avoid"], move_reward=0.1))
    index = grid_index(GridSpec(layout=["ST"], tasks=["seek"]))
    on_target = index.state((0, 1), "present")
    left = GRID_ACTIONS.index("left")
    right = GRID_ACTIONS.index("right")
    assert np.all(grid.rewards[0, on_target] == 1.0)
    assert np.all(grid.rewards[1, on_target] == -1.0)
    assert grid.transitions[0, on_target, left, index.state((0, 0), "consumed")] == 1.0
    consumed = index.state((0, 1), "consumed")
    assert grid.rewards[0, consumed, right] == 0.0
    assert grid.rewards[0, consumed, left] == pytest.approx(0.1)


def test_exit_task_restarts_from_start():
    grid = build_contextual_gridworld(GridSpec(layout=["S.E"], tasks=["exit"], exit_reward=2.0))
    assert grid.n_states == 3
    np.testing.assert_array_equal(grid.transitions[0, 2, 0], [1.0, 0.0, 0.0])
    assert np.all(grid.rewards[0, 2] == 2.0)
    assert grid.rewards[0, 0, GRID_ACTIONS.index("right")] == 0.0


def test_slip_splits_mass():
    grid = build_contextual_gridworld(GridSpec(layout=["S."], tasks=["plain"], slip=0.25))
    right = GRID_ACTIONS.index("right")
    np.testing.assert_allclose(grid.transitions[0, 0, right], [0.25, 0.75])


@pytest.mark.parametrize("layout", [["S.", "S"], ["S?"], ["##"]])
def test_malformed_layout(layout):
    with pytest.raises(InvalidInputError, match="malformed layout"):
        build_contextual_gridworld(GridSpec(layout=layout, tasks=["plain"]))


# ── Sampling ───────────────────────────────────────────────────────────

def test_default_horizon():
    assert default_horizon(0.0) == 1
    assert default_horizon(0.9) == 132
    assert 0.9 ** 132 < 1e-6 <= 0.9 ** 131


def test_same_seed_same_trajectory(random_cmdp):
    policy = Policy.uniform(2, 6, 3)
    a = sample_episode(random_cmdp, policy, 1, seed=42, horizon=30)
    b = sample_episode(random_cmdp, policy, 1, seed=42, horizon=30)
    assert a == b
    assert len(a) == 30


def test_context_out_of_range(random_cmdp):
    with pytest.raises(InvalidInputError, match="out of range"):
        sample_episode(random_cmdp, Policy.uniform(2, 6, 3), 2, seed=0)


def test_geometric_episode_stops_at_once_without_discount(rental):
    trajectory = sample_episode(rental, Policy.uniform(2, 4, 2), 0, seed=5, horizon=50, geometric=True)
    assert len(trajectory) == 1


def test_geometric_visits_match_the_occupancy():
    cmdp = build_random_cmdp(4, 2, 1, 0.5, seed=3)
    policy = Policy.uniform(1, 4, 2)
    n_episodes = 10_000
    visits = np.zeros((n_episodes, 4))
    for seed in range(n_episodes):
        for step in sample_episode(cmdp, policy, 0, seed, horizon=200, geometric=True).steps:
            visits[seed, step.state] += 1
    # expected visits per episode are occupancy / (1 - gamma)
    estimate = (1 - cmdp.gamma) * visits.mean(axis=0)
    stderr = (1 - cmdp.gamma) * visits.std(axis=0, ddof=1) / np.sqrt(n_episodes)
    assert np.all(np.abs(estimate - discounted_occupancy(cmdp, 0, policy)) <= 3 * stderr)


@given(seed=st.integers(0, 2**31 - 2), context=st.integers(0, 1))
@settings(max_examples=50, deadline=None)
def test_episode_follows_the_tables(seed, context):
    cmdp = build_random_cmdp(4, 2, 2, 0.7, seed=1)
    trajectory = sample_episode(cmdp, Policy.uniform(2, 4, 2), context, seed, horizon=20)
    for step, following in zip(trajectory.steps, trajectory.steps[1:]):
        assert following.state == step.next_state
    for step in trajectory.steps:
        assert step.reward == cmdp.rewards[context, step.state, step.action]
        assert cmdp.transitions[context, step.state, step.action, step.next_state] > 0


def test_deterministic_policy_is_followed(rental):
    policy = Policy.deterministic(np.ones((2, 4), dtype=int), 2)
    trajectory = sample_episode(rental, policy, 1, seed=9, horizon=10)
    assert all(step.action == 1 for step in trajectory.steps)
    assert trajectory.discounted_return(0.5) == pytest.approx(
        sum(0.5 ** t * s.reward for t, s in enumerate(trajectory.steps))
    )


def test_observe_maps_states_to_concepts(rental):
    trajectory = sample_episode(rental, Policy.uniform(2, 4, 2), 0, seed=2, horizon=8)
    assignment = np.array([0, 0, 1, 1])
    seen = trajectory.observe(assignment)
    assert [s.state for s in seen.steps] == [int(assignment[s.state]) for s in trajectory.steps]
    assert [s.reward for s in seen.steps] == [s.reward for s in trajectory.steps]


# ── Codec ──────────────────────────────────────────────────────────────

def test_environment_file_round_trip(tmp_path, rental):
    path = save_cmdp(rental, tmp_path / "rental.json")
    loaded = load_cmdp(path)
    np.testing.assert_array_equal(loaded.rewards, rental.rewards)
    np.testing.assert_array_equal(loaded.transitions, rental.transitions)
    assert loaded.state_labels == rental.state_labels
    assert to_json(loaded) == to_json(rental)


def test_wrong_table_shape_names_the_key(rental):
    text = to_json(rental).replace('"n_actions": 2', '"n_actions": 3')
    with pytest.raises(InvalidInputError, match="transitions"):
        from_json(text)


def test_unparseable_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(InvalidInputError):
        load_cmdp(path)
    with pytest.raises(InvalidInputError, match="cannot read"):
        load_cmdp(tmp_path / "missing.json")


def test_invalid_tables_rejected_on_load(tmp_path):
    bad = _two_state(gamma=1.0)
    path = save_cmdp(bad, tmp_path / "bad.json")
    with pytest.raises(InvalidInputError, match="discount not < 1"):
        load_cmdp(path)
    assert load_cmdp(path, validated=False).gamma == 1.0
