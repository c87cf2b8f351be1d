import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_deterministic, random_mdp
from opsr.abstraction import (
    abstract_outcome_model,
    build_abstract_mdp,
    check_transfer_optimality,
    check_value_compatibility,
    compare_coarseness,
    derive_policy,
    derived_action_tuples,
    enumerate_derived_deterministic,
    first_member_weighting,
    has_greater_transfer_value,
    is_finer_eq,
    optimal_abstract_policies,
    partially_derive,
    random_weighting,
    transfer_cover,
    uniform_weighting,
    validate_weighting,
)
from opsr.constructions import history_dependent_merge, plannability_counterexample
from opsr.errors import CapExceededError
from opsr.mdp import deterministic_policy, is_plannable_up_to, policy_evaluation, solve_optimal
from opsr.outcomes import expected_outcome_sequence, minimal_outcome_equivalent_abstraction
from opsr.partition import StateAbstraction
from opsr.verify import random_deterministic_task, set_partitions


# -- partitions ---------------------------------------------------------------

def test_partition_basics():
    phi = StateAbstraction(("b", "a", "b", "c"))
    assert phi.labels == ("b", "a", "c")
    assert phi.index.tolist() == [0, 1, 0, 2]
    assert phi.members("b").tolist() == [0, 2]
    assert phi.same_partition(StateAbstraction((7, 3, 7, 1)))
    assert not phi.same_partition(StateAbstraction.identity(4))
    assert StateAbstraction.from_dict(phi.to_dict()) == phi
    assert StateAbstraction.coarsest(3).n_classes == 1
    assert phi.restrict([1, 3]).class_of == ("a", "c")


def test_bell_numbers():
    assert [sum(1 for _ in set_partitions(n)) for n in range(6)] == [1, 1, 2, 5, 15, 52]


# -- weightings and abstract MDPs ---------------------------------------------

def test_weightings_valid(rng):
    phi = StateAbstraction((0, 1, 0, 0, 2))
    for w in (uniform_weighting(phi), first_member_weighting(phi), random_weighting(phi, rng)):
        assert validate_weighting(phi, w) == []
    assert validate_weighting(phi, np.ones(5))
    assert validate_weighting(phi, np.ones(3))


def test_invalid_weighting_rejected(rng):
    m = random_mdp(rng, 3, 2, 0.9)
    with pytest.raises(ValueError):
        build_abstract_mdp(m, StateAbstraction((0, 0, 1)), np.ones(3))


def test_identity_abstraction_reproduces_mdp(rng):
    m = random_mdp(rng, 4, 2, 0.9)
    phi = StateAbstraction.identity(4)
    ab = build_abstract_mdp(m, phi, uniform_weighting(phi))
    np.testing.assert_allclose(ab.mdp.transition, m.transition, atol=1e-12)
    np.testing.assert_allclose(solve_optimal(ab.mdp)[1], solve_optimal(m)[1], atol=1e-9)


def test_abstract_dynamics_by_hand():
    # 0 and 1 merged with weights 1/4, 3/4; both step to 2 with different rewards
    succ = np.array([[2], [2], [2]])
    rew = np.array([[1.0], [5.0], [0.0]])
    from opsr.mdp import TabularMdp
    m = TabularMdp.deterministic(succ, rew, 0.5, [False, False, True], 0)
    phi = StateAbstraction(("x", "x", "end"))
    ab = build_abstract_mdp(m, phi, np.array([0.25, 0.75, 1.0]))
    assert ab.mdp.transition[0, 0, 1] == pytest.approx(1.0)
    assert ab.mdp.expected_reward()[0, 0] == pytest.approx(0.25 * 1 + 0.75 * 5)
    assert ab.mdp.terminal.tolist() == [False, True]


def test_abstract_mdp_rows_stochastic(rng):
    m = random_mdp(rng, 6, 3, 0.9)
    phi = StateAbstraction((0, 1, 0, 2, 1, 0))
    ab = build_abstract_mdp(m, phi, random_weighting(phi, rng))
    np.testing.assert_allclose(ab.mdp.transition.sum(axis=2), 1.0, atol=1e-12)


def test_abstract_outcomes_preserve_decomposition(rng):
    task, om, _ = random_deterministic_task(rng, max_states=6)
    phi = minimal_outcome_equivalent_abstraction(task, om, task.n_states)
    w = uniform_weighting(phi)
    ab = build_abstract_mdp(task, phi, w)
    aom = abstract_outcome_model(task, om, phi, w, ab)
    from opsr.outcomes import check_reward_decomposition
    assert check_reward_decomposition(ab.mdp, aom, 1e-9)


def test_ground_and_abstract_outcome_sequences_agree(rng):
    for _ in range(10):
        task, om, _ = random_deterministic_task(rng, max_states=6, max_actions=2)
        phi = minimal_outcome_equivalent_abstraction(task, om, task.n_states)
        w = first_member_weighting(phi)
        ab = build_abstract_mdp(task, phi, w)
        aom = abstract_outcome_model(task, om, phi, w, ab)
        for s in range(task.n_states):
            for seq in itertools.product(range(task.n_actions), repeat=3):
                np.testing.assert_allclose(expected_outcome_sequence(task, om, s, seq),
                                           expected_outcome_sequence(ab.mdp, aom, int(phi.index[s]), seq), atol=1e-9)


def test_history_dependent_merge_breaks_markov():
    mdp, om, names = history_dependent_merge()
    phi = StateAbstraction((0, 1, 1, 2, 3))
    ab = build_abstract_mdp(mdp, phi, uniform_weighting(phi))
    # the merged class reaches either terminal with probability 1/2
    np.testing.assert_allclose(ab.mdp.transition[1, 0, [2, 3]], [0.5, 0.5])
    assert not minimal_outcome_equivalent_abstraction(mdp, om, 3).class_of[1] == \
        minimal_outcome_equivalent_abstraction(mdp, om, 3).class_of[2]


# -- derived policies and coarseness -----------------------------------------

def test_derive_policy_rows():
    phi = StateAbstraction(("a", "b", "a"))
    pi = derive_policy(np.array([[1, 0], [0.3, 0.7]]), phi)
    np.testing.assert_array_equal(pi, [[1, 0], [0.3, 0.7], [1, 0]])
    with pytest.raises(ValueError):
        derive_policy(np.ones((3, 2)) / 2, phi)


def test_partially_derive_uses_default_off_cover():
    src = StateAbstraction(("x", "y"))
    dst = StateAbstraction(("y", "z", "x"))
    pi, cover = partially_derive(np.array([[1.0, 0], [0, 1.0]]), src, dst, np.full((3, 2), 0.5))
    assert cover.tolist() == [0, 2]
    np.testing.assert_array_equal(pi, [[0, 1], [0.5, 0.5], [1, 0]])
    assert transfer_cover(src, dst).tolist() == [0, 2]


def test_compare_coarseness_cases():
    fine = StateAbstraction((0, 1, 2))
    mid = StateAbstraction((0, 0, 1))
    other = StateAbstraction((0, 1, 1))
    assert compare_coarseness(fine, mid) == "strictly_finer"
    assert compare_coarseness(mid, fine) == "strictly_coarser"
    assert compare_coarseness(mid, StateAbstraction(("p", "p", "q"))) == "isomorphic"
    assert compare_coarseness(mid, other) == "incomparable"
    assert compare_coarseness(mid, other, states=[0, 2]) == "isomorphic"


def test_derived_enumeration_counts_and_uniqueness():
    phi = StateAbstraction((0, 1, 0, 2))
    pols = list(enumerate_derived_deterministic(phi, 3))
    assert len(pols) == 27
    assert len(derived_action_tuples(phi, 3)) == 27
    with pytest.raises(CapExceededError):
        list(enumerate_derived_deterministic(phi, 3, cap=26))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 10_000))
def test_control_property_random(n, seed):
    rng = np.random.default_rng(seed)
    phi = StateAbstraction(tuple(rng.integers(0, n, size=n)))
    tuples = derived_action_tuples(phi, 2)
    for s, t in itertools.combinations(range(n), 2):
        assert (phi.class_of[s] == phi.class_of[t]) == all(p[s] == p[t] for p in tuples)


def test_finer_abstraction_has_greater_transfer_value():
    rng = np.random.default_rng(3)
    for _ in range(20):
        m = random_mdp(rng, 3, 2, 0.9)
        fine, coarse = StateAbstraction.identity(3), StateAbstraction.coarsest(3)
        assert has_greater_transfer_value(fine, coarse, m) in ("greater", "strictly_greater")
        assert has_greater_transfer_value(coarse, fine, m) in ("not_greater", "greater")


# -- value compatibility and transfer optimality ------------------------------

def test_optimal_abstract_policies_enumerates_ties():
    from opsr.mdp import TabularMdp
    m = TabularMdp.deterministic(np.array([[1, 1], [1, 1]]), np.zeros((2, 2)), 0.9, [False, True], 0)
    phi = StateAbstraction.identity(2)
    _, pols = optimal_abstract_policies(build_abstract_mdp(m, phi, uniform_weighting(phi)))
    assert sorted(p.tolist() for p in pols) == [[0, 0], [1, 0]]


def test_transfer_optimality_random_pairs(rng):
    for _ in range(15):
        src, om_s, core = random_deterministic_task(rng, max_states=6)
        dst, om_d, _ = random_deterministic_task(rng, max_states=6, core=core)
        h = core[0].shape[0]
        phi_s = minimal_outcome_equivalent_abstraction(src, om_s, h)
        phi_d = minimal_outcome_equivalent_abstraction(dst, om_d, h)
        ab = build_abstract_mdp(src, phi_s, random_weighting(phi_s, rng))
        ok, wit = check_transfer_optimality(ab, dst, phi_d, cap=1 << 15)
        assert ok, wit


def test_coarse_abstraction_fails_transfer():
    # merging states with different values breaks value compatibility
    from opsr.mdp import TabularMdp
    m = TabularMdp.deterministic(np.array([[2], [2], [2]]), np.array([[0.0], [1.0], [0.0]]), 0.9,
                                 [False, False, True], 0)
    phi = StateAbstraction(("x", "x", "end"))
    ab = build_abstract_mdp(m, phi, uniform_weighting(phi))
    assert not check_value_compatibility(np.array([[1.0], [1.0]]), ab, m, phi)
    ok, wit = check_transfer_optimality(ab, m, phi)
    assert not ok and wit["reason"] == "value_compatibility"


def test_counterexample_values_and_witness():
    alpha, om_a, beta, om_b, names = plannability_counterexample()
    h = 3
    phi_a = minimal_outcome_equivalent_abstraction(alpha, om_a, h)
    phi_b = minimal_outcome_equivalent_abstraction(beta, om_b, h)
    assert phi_a.class_of[names["alpha0"]] == phi_b.class_of[names["beta0"]]
    ab = build_abstract_mdp(alpha, phi_a, uniform_weighting(phi_a))
    _, v_abs = solve_optimal(ab.mdp)
    _, v_beta = solve_optimal(beta)
    assert v_abs[phi_a.position(phi_b.class_of[names["beta0"]])] == pytest.approx(1.0, abs=1e-12)
    assert v_beta[names["beta0"]] == pytest.approx(2.0, abs=1e-12)
    ok, wit = check_transfer_optimality(ab, beta, phi_b)
    assert not ok and wit["state"] == names["beta0"]
    assert not is_plannable_up_to(beta, horizon=3)
    # the source side is fine
    assert check_transfer_optimality(ab, alpha, phi_a)[0]
