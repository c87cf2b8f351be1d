import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_deterministic, random_mdp
from opsr.constructions import plannability_counterexample
from opsr.domains import compile_task, parse_task, shipped_tasks
from opsr.mdp import TabularMdp
from opsr.outcomes import (
    OutcomeModel,
    check_reward_decomposition,
    expected_outcome_sequence,
    fingerprint,
    fingerprint_reference,
    fingerprints,
    minimal_outcome_equivalent_abstraction,
    outcome_equivalent,
    outcome_sequence_distribution,
    reward_decomposition_violations,
)

LEFT, DOWN = 2, 1


def random_task(rng, n=4, A=2, d=2, discount=0.9):
    """Random stochastic task whose rewards decompose over random outcomes."""
    m0 = random_mdp(rng, n, A, discount, sparse=True)
    sig = rng.integers(-1, 2, size=(n, A, n, d)).astype(float)
    w = rng.normal(size=d)
    R = sig @ w
    m = TabularMdp.from_dense(m0.transition, R, discount, m0.terminal, 0)
    return m, OutcomeModel.from_dense(m, sig, w)


def test_green_red_decomposition():
    tasks = shipped_tasks()
    for name, w in (("mini_red_harsh", (10.0, -10.0)), ("mini_red_mild", (10.0, -1.0))):
        m, om = compile_task(tasks[name])
        np.testing.assert_array_equal(om.reward_weights, w)
        assert check_reward_decomposition(m, om, 1e-9)


def test_perturbed_reward_fails_decomposition():
    m, om = compile_task(shipped_tasks()["mini_red_harsh"])
    rewards = m.rewards.copy()
    rewards[0, 0, 0] += 1e-3
    bad = TabularMdp(m.next_states, m.probs, rewards, m.discount, m.terminal, m.initial_state)
    assert not check_reward_decomposition(bad, om, 1e-9)
    assert reward_decomposition_violations(bad, om, 1e-9)[0][:2] == (0, 0)


def test_left_down_outcome_sequence():
    m, om = compile_task(shipped_tasks()["mini_red_harsh"])
    seq = expected_outcome_sequence(m, om, m.initial_state, [LEFT, DOWN])
    np.testing.assert_array_equal(seq, [[0, 0], [1, 0]])


def test_deterministic_sequence_is_rollout(rng):
    m = random_deterministic(rng, n=5, A=3)
    sig = rng.normal(size=(5, 3, 1, 2))
    om = OutcomeModel(sig, np.zeros(2))
    seq = [2, 0, 1, 1]
    s, expect = 3, []
    for a in seq:
        expect.append(sig[s, a, 0])
        s = m.next_states[s, a, 0]
    np.testing.assert_array_equal(expected_outcome_sequence(m, om, 3, seq), expect)


def test_expected_sequence_monte_carlo(rng):
    m, om = random_task(rng, n=3, A=2, d=2)
    seq = [1, 0]
    exact = expected_outcome_sequence(m, om, 0, seq)
    n = 200_000
    s = np.zeros(n, dtype=int)
    draws = []
    for a in seq:
        cdf = np.cumsum(m.transition[s, a], axis=1)
        s2 = (rng.random(n)[:, None] > cdf).sum(axis=1)
        sigma_dense = np.zeros((3, 2, 3, 2))
        for b in range(m.n_branches):
            sigma_dense[np.arange(3)[:, None], np.arange(2)[None, :], m.next_states[:, :, b]] += np.where(
                m.probs[:, :, b, None] > 0, om.sigma[:, :, b], 0)
        draws.append(sigma_dense[s, a, s2])
        s = s2
    for j in range(2):
        se = draws[j].std(axis=0) / np.sqrt(n) + 1e-12
        assert np.all(np.abs(draws[j].mean(axis=0) - exact[j]) < 4 * se + 1e-9)


def test_outcome_distribution():
    _, _, beta, om_b, _ = plannability_counterexample()
    dist = outcome_sequence_distribution(beta, om_b, 0, [0, 0])
    assert len(dist) == 2
    assert sorted(dist.values()) == pytest.approx([0.5, 0.5])
    m, om = compile_task(shipped_tasks()["mini_open"])
    assert list(outcome_sequence_distribution(m, om, 0, [3, 3, 1]).values()) == [1.0]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_distribution_support_expectation(seed):
    rng = np.random.default_rng(seed)
    m, om = random_task(rng)
    seq = list(rng.integers(0, 2, size=3))
    dist = outcome_sequence_distribution(m, om, 1, seq)
    assert sum(dist.values()) == pytest.approx(1.0, abs=1e-12)
    mean = sum(p * np.array(k) for k, p in dist.items())
    np.testing.assert_allclose(mean, expected_outcome_sequence(m, om, 1, seq), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_prefix_consistency(seed):
    rng = np.random.default_rng(seed)
    m, om = random_task(rng)
    seq = list(rng.integers(0, 2, size=5))
    full = expected_outcome_sequence(m, om, 0, seq)
    for j in range(1, 6):
        np.testing.assert_array_equal(full[j - 1], expected_outcome_sequence(m, om, 0, seq[:j])[-1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_length_monotonicity_and_equivalence_axioms(seed):
    rng = np.random.default_rng(seed)
    m = random_deterministic(rng, n=6, A=2)
    om = OutcomeModel(rng.integers(0, 2, size=(6, 2, 1, 1)).astype(float), np.ones(1))
    task = (m, om)
    for s, t in itertools.combinations(range(6), 2):
        eq = [outcome_equivalent(task, s, task, t, h) for h in range(1, 5)]
        # equivalent at a horizon implies equivalent at every shorter one
        assert all(not eq[i] or all(eq[:i]) for i in range(4))
        assert eq[-1] == outcome_equivalent(task, t, task, s, 4)
    for s in range(6):
        assert outcome_equivalent(task, s, task, s, 4)
    for a, b, c in itertools.permutations(range(6), 3):
        if outcome_equivalent(task, a, task, b, 3) and outcome_equivalent(task, b, task, c, 3):
            assert outcome_equivalent(task, a, task, c, 3)


def test_fingerprint_fast_path_matches_reference(rng):
    for _ in range(5):
        m, om = random_task(rng, n=4, A=2, d=1)
        for s in range(4):
            assert fingerprint(m, om, s, 3) == fingerprint_reference(m, om, s, 3)
    md = random_deterministic(rng, n=5, A=2)
    omd = OutcomeModel(rng.integers(0, 2, size=(5, 2, 1, 1)).astype(float), np.ones(1))
    fast = fingerprints(md, omd, 4)
    assert fast == [fingerprint_reference(md, omd, s, 4) for s in range(5)]


def test_fingerprint_prefix_reduct(rng):
    m = random_deterministic(rng, n=6, A=2)
    om = OutcomeModel(rng.integers(0, 2, size=(6, 2, 1, 1)).astype(float), np.ones(1))
    f1, f2 = fingerprints(m, om, 1), fingerprints(m, om, 2)
    for s, t in itertools.combinations(range(6), 2):
        if f2[s] == f2[t]:
            assert f1[s] == f1[t]


def test_terminal_states_share_zero_fingerprint():
    m, om = compile_task(shipped_tasks()["mini_open"])
    goal = np.flatnonzero(m.terminal)
    zero = OutcomeModel(np.zeros_like(om.sigma), om.reward_weights)
    assert fingerprint(m, om, int(goal[0]), 4) == fingerprint(m, zero, 0, 4)


def test_zero_outcomes_give_single_class(rng):
    m = random_deterministic(rng, n=5, A=2)
    om = OutcomeModel(np.zeros((5, 2, 1, 1)), np.ones(1))
    assert minimal_outcome_equivalent_abstraction(m, om, 4).n_classes == 1


def test_start_location_shift_is_equivalent():
    # same goal-relative geometry, different start: the start states are equivalent
    a = compile_task(parse_task("domain=mini\nA..\n..G\n"))
    b = compile_task(parse_task("domain=mini\n.A.\n..G\n"))
    sa = a[0].meta["index"][(1, 0)]
    sb = b[0].meta["index"][(1, 0)]
    assert outcome_equivalent(a, sa, b, sb, 6)


def test_obstacle_changes_sequences():
    a = compile_task(parse_task("domain=mini\nA..\n..G\n"))
    b = compile_task(parse_task("domain=mini\nA#.\n..G\n"))
    assert not outcome_equivalent(a, 0, b, 0, 6)


def test_abstraction_is_partition(rng):
    m, om = random_task(rng, n=5, A=2, d=1)
    phi = minimal_outcome_equivalent_abstraction(m, om, 3)
    members = sorted(s for block in phi.blocks() for s in block)
    assert members == list(range(5))


def test_mini_counts_under_both_terminal_conventions():
    from opsr.domains import enumerate_mini_domain
    from opsr.partition import StateAbstraction

    tasks = enumerate_mini_domain()

    def count(h, flag):
        labels = []
        for _, m, om in tasks:
            labels += minimal_outcome_equivalent_abstraction(m, om, h, distinguish_terminal=flag).class_of
        return StateAbstraction(labels).n_classes

    # frozen outputs: strict equivalence vs a separate class for terminal states
    assert (count(3, False), count(6, False)) == (217, 369)
    assert (count(3, True), count(6, True)) == (218, 370)
