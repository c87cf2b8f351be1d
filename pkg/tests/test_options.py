import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import chain, random_deterministic, random_mdp
from opsr.domains import compile_task, shipped_tasks
from opsr.options import (
    FeatureSpec,
    OptionDef,
    OptionTables,
    dumps_options,
    execute_option,
    loads_options,
    option_action_dist,
    option_termination_prob,
    smdp_action_set,
    softmax,
)
from opsr.opsr import opsr_matrix, pca_reduce


def random_option(rng, A=3, F=4, spec=None):
    return OptionDef(rng.normal(size=(A, F)), rng.normal(size=A), rng.normal(size=(2, F)), rng.normal(size=2),
                     spec or FeatureSpec(), "o")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=6))
def test_softmax_is_distribution(logits):
    p = softmax(np.array(logits))
    assert p.sum() == pytest.approx(1.0)
    assert np.all(p >= 0)
    np.testing.assert_allclose(softmax(np.array(logits) + 7.0), p, atol=1e-12)


def test_distributions_match_formula(rng):
    opt = random_option(rng)
    f = rng.normal(size=4)
    z = opt.control_weights @ f + opt.control_bias
    np.testing.assert_allclose(option_action_dist(opt, f), np.exp(z) / np.exp(z).sum())
    zb = opt.termination_weights @ f + opt.termination_bias
    assert option_termination_prob(opt, f) == pytest.approx(np.exp(zb[1]) / np.exp(zb).sum())
    with pytest.raises(ValueError):
        opt.action_dist(np.zeros(3))


def test_shape_validation():
    with pytest.raises(ValueError):
        OptionDef(np.zeros((2, 3)), np.zeros(3), np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ValueError):
        OptionDef(np.zeros((2, 3)), np.zeros(2), np.zeros((1, 3)), np.zeros(2))


def test_serialization_round_trip(rng):
    spec = FeatureSpec("full_stack", 3, (0, 2), rng.normal(size=5), rng.normal(size=(2, 5)))
    opts = [random_option(rng, F=2, spec=spec), OptionDef.zeros(3, 2, spec, "z")]
    back = loads_options(dumps_options(opts))
    for a, b in zip(opts, back):
        for name in ("control_weights", "control_bias", "termination_weights", "termination_bias"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
        assert b.feature_spec.variant == spec.variant and b.feature_spec.k == 3
        assert b.feature_spec.components == (0, 2)
        np.testing.assert_array_equal(b.feature_spec.pca_components, spec.pca_components)
    assert dumps_options(back) == dumps_options(opts)


def test_feature_spec_projection():
    m, om = compile_task(shipped_tasks()["craftworld_compact"])
    spec = FeatureSpec("terminal_up_to", 2, om.feature_components)
    raw = spec.raw_features(m, om)
    assert raw.shape == (m.n_states, len(om.feature_components) * (m.n_actions + m.n_actions**2))
    pca = pca_reduce(raw, 0.99)
    proj = spec.with_pca(pca.mean, pca.components)
    np.testing.assert_allclose(proj.features(m, om), pca.reduced, atol=1e-9)
    np.testing.assert_allclose(proj.features(m, om, [3, 5]), pca.reduced[[3, 5]], atol=1e-9)


def test_first_action_always_taken(rng):
    m = chain(4, 0.9, 1.0)
    opt = OptionDef(np.zeros((1, 1)), np.zeros(1), np.zeros((2, 1)), np.array([-100.0, 100.0]))
    res = execute_option(m, np.zeros((4, 1)), opt, 0, rng)
    assert res.steps == 1 and res.end_state == 1


def test_never_terminating_option_stops_at_terminal(rng):
    m = chain(5, 0.5, 8.0)
    opt = OptionDef(np.zeros((1, 1)), np.zeros(1), np.zeros((2, 1)), np.array([100.0, -100.0]))
    res = execute_option(m, np.zeros((5, 1)), opt, 0, rng)
    assert res.end_state == 4 and res.steps == 4
    assert res.reward == pytest.approx(0.5**3 * 8.0)
    res = execute_option(m, np.zeros((5, 1)), opt, 0, rng, max_steps=2)
    assert res.steps == 2 and res.end_state == 2
    with pytest.raises(ValueError):
        execute_option(m, np.zeros((5, 1)), opt, 0, rng, max_steps=0)


def test_option_duration_is_geometric(rng):
    # constant stop probability q: duration counts beyond the first step are geometric
    n = 60
    succ = np.array([[min(s + 1, n - 1)] for s in range(n)])
    from opsr.mdp import TabularMdp
    m = TabularMdp.deterministic(succ, np.zeros((n, 1)), 0.9, [False] * (n - 1) + [True], 0)
    q = 0.3
    opt = OptionDef(np.zeros((1, 1)), np.zeros(1), np.zeros((2, 1)), np.array([0.0, np.log(q / (1 - q))]))
    tables = OptionTables.build(opt, np.zeros((n, 1)))
    steps = np.array([execute_option(m, tables, None, 0, rng).steps for _ in range(20000)])
    assert steps.mean() == pytest.approx(1 / q, rel=0.03)


def test_stochastic_mdp_option_trace_consistent(rng):
    m = random_mdp(rng, 5, 3, 0.9)
    opt = random_option(rng, A=3, F=2)
    res = execute_option(m, rng.normal(size=(5, 2)), opt, 0, rng, max_steps=10)
    disc = sum(0.9**i * r for i, (_, _, r) in enumerate(res.trace))
    assert res.reward == pytest.approx(disc)
    for (s, a, _), (s2, _, _) in zip(res.trace, res.trace[1:]):
        assert m.transition[s, a, s2] > 0


def test_action_set():
    aset = smdp_action_set(4, [OptionDef.zeros(4, 2)])
    assert aset.size == 5 and aset.is_option(4) and not aset.is_option(3)
    assert aset.option(4).n_actions == 4
