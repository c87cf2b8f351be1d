"""Small hand-built MDPs used to exercise the abstraction and transfer checks."""
from __future__ import annotations

import numpy as np

from opsr.mdp import TabularMdp
from opsr.outcomes import OutcomeModel

A_ACT, B_ACT = 0, 1


def _reward_as_outcome(mdp: TabularMdp) -> OutcomeModel:
    return OutcomeModel(mdp.rewards[..., None].copy(), [1.0], ("reward",))


def plannability_counterexample():
    """Two undiscounted tasks whose start states share expected outcomes but not optimal values.

    Source ``alpha``: from ``alpha0`` action b ends with +1; action a leads to
    ``alpha2`` where either action ends with +1.

    Target ``beta``: from ``beta0`` action b ends with +1; action a moves to
    ``beta2a`` or ``beta2b`` with probability 1/2 each.  In ``beta2a`` action a
    pays +2 and b pays 0; in ``beta2b`` it is the other way round.  Any open
    loop plan is worth 1 from ``beta0`` while a reactive policy earns 2.

    Returns ``(alpha, alpha_outcomes, beta, beta_outcomes, names)`` where
    ``names`` maps readable state names to indices.
    """
    P = np.zeros((3, 2, 3))
    R = np.zeros((3, 2, 3))
    P[0, A_ACT, 1] = 1.0
    P[0, B_ACT, 2], R[0, B_ACT, 2] = 1.0, 1.0
    P[1, :, 2], R[1, :, 2] = 1.0, 1.0
    P[2, :, 2] = 1.0
    alpha = TabularMdp.from_dense(P, R, 1.0, [False, False, True], 0, "alpha")

    P = np.zeros((4, 2, 4))
    R = np.zeros((4, 2, 4))
    P[0, A_ACT, 1] = P[0, A_ACT, 2] = 0.5
    P[0, B_ACT, 3], R[0, B_ACT, 3] = 1.0, 1.0
    P[1, :, 3] = 1.0
    R[1, A_ACT, 3] = 2.0
    P[2, :, 3] = 1.0
    R[2, B_ACT, 3] = 2.0
    P[3, :, 3] = 1.0
    beta = TabularMdp.from_dense(P, R, 1.0, [False, False, False, True], 0, "beta")

    names = {"alpha0": 0, "alpha2": 1, "alpha_end": 2, "beta0": 0, "beta2a": 1, "beta2b": 2, "beta_end": 3}
    return alpha, _reward_as_outcome(alpha), beta, _reward_as_outcome(beta), names


def history_dependent_merge():
    """A task where merging two states makes the aggregate process non-Markov.

    State 1 leads to ``2a`` by action a and ``2b`` by action b.  From ``2a``
    every action reaches terminal 3 with reward 0; from ``2b`` every action
    reaches terminal 4 with reward 1.  Returns ``(mdp, outcomes, names)``.
    """
    S = 5
    P = np.zeros((S, 2, S))
    R = np.zeros((S, 2, S))
    P[0, A_ACT, 1] = 1.0
    P[0, B_ACT, 2] = 1.0
    P[1, :, 3] = 1.0
    P[2, :, 4] = 1.0
    R[2, :, 4] = 1.0
    P[3, :, 3] = 1.0
    P[4, :, 4] = 1.0
    mdp = TabularMdp.from_dense(P, R, 0.9, [False, False, False, True, True], 0, "merge")
    names = {"s1": 0, "s2a": 1, "s2b": 2, "s3": 3, "s4": 4}
    return mdp, _reward_as_outcome(mdp), names
