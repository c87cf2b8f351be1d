import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from opsr.harness.analysis import (
    aurc,
    aurc_trapezoid,
    controller_name,
    dominant_story,
    extract_story,
    occupancy_graph,
    paired_greater,
)
from opsr.harness.learners import PRIMITIVE
from opsr.domains import compile_task, parse_task


def test_aurc_values():
    assert aurc([1, 2, 3]) == 6.0
    assert aurc_trapezoid([1, 2, 3]) == 4.0
    assert aurc_trapezoid([5]) == 5.0
    with pytest.raises(ValueError):
        aurc([])
    with pytest.raises(ValueError):
        aurc_trapezoid([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30))
def test_trapezoid_oracle(xs):
    r = np.array(xs)
    expect = r.sum() - 0.5 * (r[0] + r[-1])
    assert aurc_trapezoid(xs) == pytest.approx(expect, abs=1e-6)


def test_story_from_red_green_trace():
    m, om = compile_task(parse_task("domain=mini\nmeta outcomes=goal,red\nR.A\n..G\n"))
    idx = m.meta["index"]
    states = [idx[(2, 0)], idx[(1, 0)], idx[(0, 0)], idx[(0, 1)], idx[(1, 1)], idx[(2, 1)]]
    actions = [2, 2, 1, 3, 3]
    assert extract_story(states, actions, om, m) == ("red", "goal")
    with pytest.raises(ValueError):
        extract_story([states[0], states[3]], [2], om, m)


def test_negative_components_reported():
    from opsr.mdp import TabularMdp
    from opsr.outcomes import OutcomeModel
    m = TabularMdp.deterministic(np.array([[1], [1]]), np.zeros((2, 1)), 0.9, [False, True], 0)
    om = OutcomeModel(np.array([[[[-1.0, 0.0]]], [[[0.0, 0.0]]]]), np.zeros(2), ("a", "b"))
    assert extract_story([0, 1], [0], om, m) == ("-a",)


def test_dominant_story_tie_break():
    assert dominant_story([("b",), ("a",), ("a",), ("b",)]) == ("b",)
    assert dominant_story([("x",), ("y",), ("y",)]) == ("y",)
    assert dominant_story([]) is None


def test_occupancy_graph():
    occ = occupancy_graph([[0, 0, PRIMITIVE], [1, PRIMITIVE]], n_options=2)
    assert occ.controllers == ("option_0", "option_1", "primitive")
    np.testing.assert_array_equal(occ.counts, [[1, 1, 0], [1, 0, 1], [0, 0, 1]])
    np.testing.assert_array_equal(occ.alive, [2, 2, 1])
    assert occ.rows()[0] == (0, "option_0", 1, 2)
    assert controller_name(PRIMITIVE) == "primitive"
    assert occupancy_graph([]).counts.shape == (0, 1)


def test_paired_test_matches_scipy(rng):
    x = rng.normal(1.0, 1.0, size=30)
    y = x - rng.normal(0.3, 0.5, size=30)
    res = paired_greater(x, y)
    ref = stats.ttest_rel(x, y, alternative="greater")
    assert res.p_value == pytest.approx(ref.pvalue)
    d = x - y
    t = d.mean() / (d.std(ddof=1) / np.sqrt(len(d)))
    assert res.statistic == pytest.approx(t)


def test_paired_test_edge_cases():
    assert paired_greater([2, 3], [1, 2]).p_value == 0.0
    assert paired_greater([1, 2], [1, 2]).p_value == 1.0
    with pytest.raises(ValueError):
        paired_greater([1], [0])
    with pytest.raises(ValueError):
        paired_greater([1, 2], [0, 1, 2])
