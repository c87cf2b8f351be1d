"""Tabular SARSA(lambda) over primitive actions and, optionally, options.

Option actions are backed up as semi-Markov transitions: after an option runs
for ``k`` primitive steps with internally discounted reward ``r_acc`` the
target is ``r_acc + gamma**k * Q(s', a')`` and traces decay by
``(gamma * lambda)**k``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from opsr.mdp import TabularMdp
from opsr.options import OptionTables, SmdpActionSet, execute_option

PRIMITIVE = -1  # controller id for steps taken by a primitive high-level choice


@dataclass(frozen=True)
class LearnerConfig:
    epsilon: float = 0.05
    lam: float = 0.99
    gamma: float = 0.999
    alpha: float = 0.2
    episodes: int = 100
    max_episode_steps: int = 500
    option_max_steps: int = 100
    replacing_traces: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("epsilon", "lam", "gamma"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.episodes < 0 or self.max_episode_steps < 1 or self.option_max_steps < 1:
            raise ValueError("episode counts must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "LearnerConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class LearningCurve:
    returns: list = field(default_factory=list)
    steps: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.returns)


@dataclass(frozen=True)
class AnnotatedTrace:
    """Primitive-level trace with the controller active at each step."""

    states: tuple
    actions: tuple
    rewards: tuple
    controllers: tuple  # option index, or PRIMITIVE


def _choose(q_row: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(len(q_row)))
    best = np.flatnonzero(q_row == q_row.max())
    return int(best[0]) if len(best) == 1 else int(best[rng.integers(len(best))])


def _act(mdp, action_set, tables, s, h, rng, budget, option_max_steps, gamma):
    """Run high-level action ``h``; returns (s', trace of (s, a, r), discounted reward)."""
    if action_set is not None and action_set.is_option(h):
        res = execute_option(mdp, tables[h - action_set.n_primitive], None, s, rng,
                             max_steps=min(option_max_steps, budget), gamma=gamma)
        return res.end_state, res.trace, res.reward
    if mdp.n_branches == 1:
        s2, r = int(mdp.next_states[s, h, 0]), float(mdp.rewards[s, h, 0])
    else:
        s2, r = mdp.step(s, h, rng)
    return s2, ((s, h, r),), r


def option_tables(action_set: SmdpActionSet | None, features: np.ndarray | None) -> list:
    if action_set is None or not action_set.options:
        return []
    if features is None:
        raise ValueError("options need a feature matrix for the task")
    return [OptionTables.build(o, features) for o in action_set.options]


def sarsa_lambda_train(
    mdp: TabularMdp,
    cfg: LearnerConfig,
    rng: np.random.Generator,
    action_set: SmdpActionSet | None = None,
    features: np.ndarray | None = None,
    q_init: np.ndarray | None = None,
):
    """Train from ``mdp.initial_state``; returns ``(LearningCurve, Q, greedy AnnotatedTrace)``."""
    n_high = mdp.n_actions if action_set is None else action_set.size
    if action_set is not None and action_set.n_primitive != mdp.n_actions:
        raise ValueError("action set primitive count does not match the task")
    tables = option_tables(action_set, features)
    q = np.zeros((mdp.n_states, n_high)) if q_init is None else np.array(q_init, dtype=float)
    if q.shape != (mdp.n_states, n_high):
        raise ValueError(f"q_init shape {q.shape} != {(mdp.n_states, n_high)}")
    e = np.zeros_like(q)
    g, lam, alpha = cfg.gamma, cfg.lam, cfg.alpha
    curve = LearningCurve()
    s0 = 0 if mdp.initial_state is None else int(mdp.initial_state)
    for _ in range(cfg.episodes):
        e.fill(0.0)
        s = s0
        h = _choose(q[s], cfg.epsilon, rng)
        total, used = 0.0, 0
        while used < cfg.max_episode_steps and not mdp.terminal[s]:
            s2, trace, r_acc = _act(mdp, action_set, tables, s, h, rng, cfg.max_episode_steps - used,
                                    cfg.option_max_steps, g)
            k = len(trace)
            used += k
            total += sum(t[2] for t in trace)
            if mdp.terminal[s2]:
                target, h2 = r_acc, None
            else:
                h2 = _choose(q[s2], cfg.epsilon, rng)
                target = r_acc + g ** k * q[s2, h2]
            delta = target - q[s, h]
            if cfg.replacing_traces:
                e[s, :] = 0.0
                e[s, h] = 1.0
            else:
                e[s, h] += 1.0
            q += alpha * delta * e
            e *= (g * lam) ** k
            s, h = s2, h2
        curve.returns.append(total)
        curve.steps.append(used)
    trace = greedy_rollout(mdp, q, rng, action_set, tables, cfg.max_episode_steps, cfg.option_max_steps, g)
    return curve, q, trace


def greedy_rollout(mdp, q, rng, action_set=None, tables=(), max_steps=500, option_max_steps=100, gamma=None):
    """One episode choosing greedily from ``q``; options still sample their own actions."""
    g = mdp.discount if gamma is None else gamma
    s = 0 if mdp.initial_state is None else int(mdp.initial_state)
    states, actions, rewards, ctrl = [], [], [], []
    while len(actions) < max_steps and not mdp.terminal[s]:
        h = _choose(q[s], 0.0, rng)
        s2, trace, _ = _act(mdp, action_set, list(tables), s, h, rng, max_steps - len(actions), option_max_steps, g)
        who = h - action_set.n_primitive if action_set is not None and action_set.is_option(h) else PRIMITIVE
        for st, a, r in trace:
            states.append(int(st))
            actions.append(int(a))
            rewards.append(float(r))
            ctrl.append(who)
        s = s2
    states.append(int(s))
    return AnnotatedTrace(tuple(states), tuple(actions), tuple(rewards), tuple(ctrl))
