"""Finite tabular MDPs: validation, exact evaluation, optimal control and open-loop values.

Transitions are stored as padded successor lists rather than a dense
``(S, A, S)`` tensor so that the larger grid domains stay cheap.  For each
``(s, a)`` there are ``B`` branch slots holding a successor state, its
probability and the reward received on that transition.  Unused slots have
probability zero.  :meth:`TabularMdp.transition` materialises the dense view
when it is needed.

Reward timing: ``r(s, a, s')`` is received on the transition and terminal
states are absorbing with zero reward, so their value is always 0.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from opsr.errors import CapExceededError, DivergenceError

PROB_TOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TabularMdp:
    next_states: np.ndarray  # (S, A, B) int
    probs: np.ndarray  # (S, A, B)
    rewards: np.ndarray  # (S, A, B)
    discount: float
    terminal: np.ndarray  # (S,) bool
    initial_state: int | None = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ns = np.asarray(self.next_states, dtype=np.int64)
        if ns.ndim != 3:
            raise ValueError("next_states must have shape (S, A, B)")
        probs = np.asarray(self.probs, dtype=float)
        rewards = np.asarray(self.rewards, dtype=float)
        if probs.shape != ns.shape or rewards.shape != ns.shape:
            raise ValueError("next_states, probs and rewards must share a shape")
        terminal = np.zeros(ns.shape[0], dtype=bool) if self.terminal is None else np.asarray(self.terminal, dtype=bool)
        if terminal.shape != (ns.shape[0],):
            raise ValueError("terminal must have one flag per state")
        if ns.size and (ns.min() < 0 or ns.max() >= ns.shape[0]):
            raise ValueError("successor index out of range")
        object.__setattr__(self, "next_states", _readonly(ns))
        object.__setattr__(self, "probs", _readonly(probs))
        object.__setattr__(self, "rewards", _readonly(rewards))
        object.__setattr__(self, "terminal", _readonly(terminal))
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_states(self) -> int:
        return self.next_states.shape[0]

    @property
    def n_actions(self) -> int:
        return self.next_states.shape[1]

    @property
    def n_branches(self) -> int:
        return self.next_states.shape[2]

    @classmethod
    def from_dense(cls, transition, reward, discount, terminal=None, initial_state=None, name="", meta=None):
        """Build from a dense ``(S, A, S)`` transition tensor and matching reward tensor."""
        P = np.asarray(transition, dtype=float)
        R = np.broadcast_to(np.asarray(reward, dtype=float), P.shape)
        S, A, _ = P.shape
        width = max(1, int((P > 0).sum(axis=2).max()) if P.size else 1)
        ns = np.tile(np.arange(S)[:, None, None], (1, A, width))
        pr = np.zeros((S, A, width))
        rw = np.zeros((S, A, width))
        for s in range(S):
            for a in range(A):
                (succ,) = np.nonzero(P[s, a] > 0)
                ns[s, a, : len(succ)] = succ
                pr[s, a, : len(succ)] = P[s, a, succ]
                rw[s, a, : len(succ)] = R[s, a, succ]
        if terminal is None:
            terminal = np.zeros(S, dtype=bool)
        return cls(ns, pr, rw, discount, terminal, initial_state, name, dict(meta or {}))

    @classmethod
    def deterministic(cls, successor, reward, discount, terminal=None, initial_state=None, name="", meta=None):
        """Build from a ``(S, A)`` successor table and ``(S, A)`` rewards."""
        succ = np.asarray(successor, dtype=np.int64)[:, :, None]
        rw = np.asarray(reward, dtype=float)[:, :, None]
        if terminal is None:
            terminal = np.zeros(succ.shape[0], dtype=bool)
        return cls(succ, np.ones(succ.shape), rw, discount, terminal, initial_state, name, dict(meta or {}))

    @property
    def transition(self) -> np.ndarray:
        """Dense ``(S, A, S)`` transition tensor."""
        S, A, _ = self.next_states.shape
        P = np.zeros((S, A, S))
        s_idx, a_idx = np.meshgrid(np.arange(S), np.arange(A), indexing="ij")
        for b in range(self.n_branches):
            np.add.at(P, (s_idx, a_idx, self.next_states[:, :, b]), self.probs[:, :, b])
        return P

    @property
    def reward(self) -> np.ndarray:
        """Dense ``(S, A, S)`` reward tensor (zero where the transition is impossible)."""
        S, A, _ = self.next_states.shape
        R = np.zeros((S, A, S))
        for b in range(self.n_branches):
            live = self.probs[:, :, b] > 0
            s_idx, a_idx = np.nonzero(live)
            R[s_idx, a_idx, self.next_states[s_idx, a_idx, b]] = self.rewards[s_idx, a_idx, b]
        return R

    def expected_reward(self) -> np.ndarray:
        """``r(s, a)``, shape ``(S, A)``."""
        return (self.probs * self.rewards).sum(axis=2)

    def is_deterministic(self) -> bool:
        live = self.probs > PROB_TOL
        return bool(np.all(live.sum(axis=2) == 1))

    def successor(self) -> np.ndarray:
        """``(S, A)`` successor table; only meaningful for deterministic MDPs."""
        idx = np.argmax(self.probs, axis=2)
        return np.take_along_axis(self.next_states, idx[:, :, None], axis=2)[:, :, 0]

    def push(self, dist: np.ndarray, action: int) -> np.ndarray:
        """State distribution after taking ``action`` from distribution ``dist``."""
        out = np.zeros(self.n_states)
        for b in range(self.n_branches):
            np.add.at(out, self.next_states[:, action, b], dist * self.probs[:, action, b])
        return out

    def policy_matrix(self, policy: np.ndarray) -> sp.csr_matrix:
        """Sparse ``P_pi`` with ``P_pi[s, s'] = sum_a pi(a|s) p(s'|s,a)``."""
        S, A, B = self.next_states.shape
        w = policy[:, :, None] * self.probs
        rows = np.broadcast_to(np.arange(S)[:, None, None], (S, A, B)).ravel()
        return sp.csr_matrix((w.ravel(), (rows, self.next_states.ravel())), shape=(S, S))

    def step(self, s: int, a: int, rng: np.random.Generator) -> tuple[int, float]:
        """Sample one transition."""
        p = self.probs[s, a]
        b = 0 if self.n_branches == 1 else int(rng.choice(self.n_branches, p=p / p.sum()))
        return int(self.next_states[s, a, b]), float(self.rewards[s, a, b])


def uniform_policy(mdp: TabularMdp) -> np.ndarray:
    return np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)


def deterministic_policy(actions: Sequence[int], n_actions: int) -> np.ndarray:
    actions = np.asarray(actions, dtype=np.int64)
    pi = np.zeros((len(actions), n_actions))
    pi[np.arange(len(actions)), actions] = 1.0
    return pi


def validate_policy(policy: np.ndarray, mdp: TabularMdp) -> None:
    policy = np.asarray(policy)
    if policy.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy shape {policy.shape} does not match MDP ({mdp.n_states}, {mdp.n_actions})")
    if np.any(policy < 0) or np.any(np.abs(policy.sum(axis=1) - 1) > PROB_TOL):
        raise ValueError("policy rows must be probability distributions")


def _closed_nonterminal_set(mdp: TabularMdp) -> np.ndarray:
    """Largest set of non-terminal states some policy can stay inside forever."""
    inside = ~mdp.terminal.copy()
    live = mdp.probs > 0
    while True:
        succ_inside = np.where(live, inside[mdp.next_states], True).all(axis=2)
        keep = inside & succ_inside.any(axis=1)
        if np.array_equal(keep, inside):
            return inside
        inside = keep


def validate_mdp(mdp: TabularMdp) -> list[str]:
    """Return a list of human-readable invariant violations; empty means valid."""
    report: list[str] = []
    if np.any(mdp.probs < 0):
        s, a, _ = np.argwhere(mdp.probs < 0)[0]
        report.append(f"negative transition probability at (s={s}, a={a})")
    sums = mdp.probs.sum(axis=2)
    for s, a in np.argwhere(np.abs(sums - 1.0) > PROB_TOL):
        report.append(
            f"transition row (s={s}, a={a}) sums to {sums[s, a]:.12g} (deficit {1.0 - sums[s, a]:.12g})"
        )
    if not np.all(np.isfinite(mdp.rewards)):
        report.append("non-finite reward")
    for s in np.nonzero(mdp.terminal)[0]:
        for a in range(mdp.n_actions):
            stay = mdp.probs[s, a][mdp.next_states[s, a] == s].sum()
            r = (mdp.probs[s, a] * mdp.rewards[s, a]).sum()
            if abs(stay - 1.0) > PROB_TOL or abs(r) > PROB_TOL:
                report.append(f"terminal state {s} is not absorbing with zero reward under action {a}")
    if not 0.0 <= mdp.discount <= 1.0:
        report.append(f"discount {mdp.discount} outside [0, 1]")
    if mdp.discount == 1.0:
        trapped = np.nonzero(_closed_nonterminal_set(mdp))[0]
        if trapped.size:
            report.append(
                "discount rule: discount=1 requires termination with probability 1 under every policy, "
                f"but states {trapped.tolist()} can avoid terminal states forever"
            )
    if mdp.initial_state is not None and not 0 <= mdp.initial_state < mdp.n_states:
        report.append(f"initial_state {mdp.initial_state} out of range")
    return report


def q_values(mdp: TabularMdp, values: np.ndarray) -> np.ndarray:
    """One-step lookahead ``Q(s, a)``; terminal rows are zero."""
    q = (mdp.probs * (mdp.rewards + mdp.discount * values[mdp.next_states])).sum(axis=2)
    q[mdp.terminal] = 0.0
    return q


def bellman_backup(mdp: TabularMdp, policy: np.ndarray, values: np.ndarray) -> np.ndarray:
    return (policy * q_values(mdp, values)).sum(axis=1)


def policy_evaluation(mdp: TabularMdp, policy: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Exact value of ``policy`` by a direct linear solve.

    The Bellman residual of the returned values is checked against
    ``tol * max(1, |v|_inf)``; an improper policy under discount 1 makes the
    system singular and raises :class:`DivergenceError`.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    policy = np.asarray(policy, dtype=float)
    validate_policy(policy, mdp)
    S = mdp.n_states
    r_pi = (policy * mdp.expected_reward()).sum(axis=1)
    P_pi = mdp.policy_matrix(policy).tolil()
    nonterm = ~mdp.terminal
    r_pi[~nonterm] = 0.0
    for s in np.nonzero(~nonterm)[0]:
        P_pi.rows[s] = []
        P_pi.data[s] = []
    system = sp.identity(S, format="csr") - mdp.discount * P_pi.tocsr()
    try:
        if S <= 400:
            v = np.linalg.solve(system.toarray(), r_pi)
        else:
            lu = spla.splu(system.tocsc())
            v = lu.solve(r_pi)
            v = v + lu.solve(r_pi - system @ v)
    except (np.linalg.LinAlgError, RuntimeError) as exc:
        raise DivergenceError("policy evaluation system is singular (improper policy with discount 1?)") from exc
    if not np.all(np.isfinite(v)):
        raise DivergenceError("policy evaluation produced non-finite values")
    v[mdp.terminal] = 0.0
    resid = np.abs(bellman_backup(mdp, policy, v) - v).max(initial=0.0)
    if resid > tol * max(1.0, np.abs(v).max(initial=0.0)):
        raise DivergenceError(f"Bellman residual {resid:.3g} exceeds tolerance after solve")
    return v


def k_horizon_value(mdp: TabularMdp, policy: np.ndarray, k: int) -> np.ndarray:
    """Expected discounted reward over the first ``k`` steps."""
    if k < 0:
        raise ValueError("k must be non-negative")
    policy = np.asarray(policy, dtype=float)
    v = np.zeros(mdp.n_states)
    for _ in range(k):
        v = bellman_backup(mdp, policy, v)
    return v


def _greedy(q: np.ndarray, tol: float, current: np.ndarray | None = None) -> np.ndarray:
    best = q.max(axis=1, keepdims=True)
    is_max = q >= best - tol
    first = np.argmax(is_max, axis=1)
    if current is None:
        return first
    keep = is_max[np.arange(len(current)), current]
    return np.where(keep, current, first)


def solve_optimal(mdp: TabularMdp, tol: float = 1e-10, max_iter: int = 10_000) -> tuple[np.ndarray, np.ndarray]:
    """Policy iteration.  Returns a deterministic greedy policy and its values.

    Ties between actions are broken towards the lowest action index.
    """
    actions = np.zeros(mdp.n_states, dtype=np.int64)
    tie_tol = max(tol, 1e-9)
    for _ in range(max_iter):
        v = policy_evaluation(mdp, deterministic_policy(actions, mdp.n_actions), tol=max(tol, 1e-9))
        q = q_values(mdp, v)
        scale = max(1.0, np.abs(q).max(initial=0.0))
        new = _greedy(q, tie_tol * scale, actions)
        if np.array_equal(new, actions):
            break
        actions = new
    else:
        raise DivergenceError("policy iteration did not stabilise")
    final = _greedy(q, tie_tol * scale)
    if not np.array_equal(final, actions):
        # lowest-index tie break can change the policy, re-evaluate so values stay exact
        v = policy_evaluation(mdp, deterministic_policy(final, mdp.n_actions), tol=max(tol, 1e-9))
    return deterministic_policy(final, mdp.n_actions), v


def open_loop_value(mdp: TabularMdp, s: int, aseq: Sequence[int]) -> float:
    """Expected discounted reward of executing a fixed action sequence from ``s``."""
    if not 0 <= s < mdp.n_states:
        raise IndexError(f"state {s} out of range")
    if len(aseq) == 0:
        raise ValueError("action sequence must be nonempty")
    rbar = mdp.expected_reward()
    dist = np.zeros(mdp.n_states)
    dist[s] = 1.0
    total, g = 0.0, 1.0
    for a in aseq:
        if not 0 <= a < mdp.n_actions:
            raise IndexError(f"action {a} out of range")
        total += g * float(dist @ rbar[:, a])
        dist = mdp.push(dist, a)
        g *= mdp.discount
    return total


def open_loop_values_all(mdp: TabularMdp, horizon: int) -> list[np.ndarray]:
    """Open-loop values of every action sequence of every length ``1..horizon``.

    Entry ``L-1`` has shape ``(|A|**L, S)``; sequences are in lexicographic order
    with the first action most significant.
    """
    S, A = mdp.n_states, mdp.n_actions
    P = mdp.transition
    rbar = mdp.expected_reward()
    dists = np.eye(S)[None]  # (1, S, S): row s = distribution from start s
    vals = np.zeros((1, S))
    out = []
    g = 1.0
    for _ in range(horizon):
        vals = (vals[:, None, :] + g * np.einsum("nst,ta->nas", dists, rbar)).reshape(-1, S)
        dists = np.einsum("nst,tau->nasu", dists, P).reshape(-1, S, S)
        out.append(vals)
        g *= mdp.discount
    return out


def is_plannable_up_to(
    mdp: TabularMdp,
    horizon: int = 6,
    tol: float = 1e-9,
    max_states: int = 8,
    max_horizon: int = 6,
) -> bool:
    """Finite-horizon plannability check by brute force.

    For every deterministic policy, state and ``n <= horizon`` there must be an
    action sequence of length ``n`` whose open-loop value equals the policy's
    ``n``-step value.  Deterministic MDPs are plannable and return immediately.
    """
    if mdp.is_deterministic():
        return True
    if mdp.n_states > max_states or horizon > max_horizon:
        raise CapExceededError(
            f"plannability brute force capped at {max_states} states / horizon {max_horizon}; "
            f"got {mdp.n_states} states / horizon {horizon}"
        )
    open_loop = [np.sort(v, axis=0) for v in open_loop_values_all(mdp, horizon)]
    for actions in itertools.product(range(mdp.n_actions), repeat=mdp.n_states):
        pi = deterministic_policy(actions, mdp.n_actions)
        v = np.zeros(mdp.n_states)
        for n in range(1, horizon + 1):
            v = bellman_backup(mdp, pi, v)
            table = open_loop[n - 1]
            for s in range(mdp.n_states):
                col = table[:, s]
                i = np.searchsorted(col, v[s])
                near = [col[j] for j in (i - 1, i) if 0 <= j < len(col)]
                if min(abs(c - v[s]) for c in near) > tol:
                    return False
    return True


def reachable_states(mdp: TabularMdp, start: int | Iterable[int]) -> np.ndarray:
    """Boolean mask of states reachable from ``start`` (terminal states are not expanded)."""
    starts = [start] if isinstance(start, (int, np.integer)) else list(start)
    seen = np.zeros(mdp.n_states, dtype=bool)
    stack = list(starts)
    seen[starts] = True
    while stack:
        s = stack.pop()
        if mdp.terminal[s]:
            continue
        succ = mdp.next_states[s][mdp.probs[s] > 0]
        for t in np.unique(succ):
            if not seen[t]:
                seen[t] = True
                stack.append(int(t))
    return seen


def greedy_trace(mdp: TabularMdp, policy: np.ndarray, start: int | None = None, max_steps: int = 1000):
    """Roll out a deterministic policy on a deterministic MDP; returns (states, actions, rewards)."""
    s = mdp.initial_state if start is None else start
    if s is None:
        raise ValueError("no start state given and MDP has no initial_state")
    succ = mdp.successor()
    rew = mdp.expected_reward()
    states, actions, rewards = [int(s)], [], []
    for _ in range(max_steps):
        if mdp.terminal[s]:
            break
        a = int(np.argmax(policy[s]))
        actions.append(a)
        rewards.append(float(rew[s, a]))
        s = int(succ[s, a])
        states.append(s)
    return states, actions, rewards


def _fmt(x: float) -> str:
    return repr(float(x))


def mdp_to_dict(mdp: TabularMdp) -> dict:
    transitions = []
    for s, a, b in np.argwhere(mdp.probs > 0):
        transitions.append(
            [int(s), int(a), int(mdp.next_states[s, a, b]), _fmt(mdp.probs[s, a, b]), _fmt(mdp.rewards[s, a, b])]
        )
    return {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "discount": _fmt(mdp.discount),
        "terminal": [int(s) for s in np.nonzero(mdp.terminal)[0]],
        "initial_state": mdp.initial_state,
        "name": mdp.name,
        "transitions": transitions,
    }


def mdp_from_dict(d: dict) -> TabularMdp:
    S, A = int(d["n_states"]), int(d["n_actions"])
    P = np.zeros((S, A, S))
    R = np.zeros((S, A, S))
    for s, a, t, p, r in d["transitions"]:
        P[s, a, t] += float(p)
        R[s, a, t] = float(r)
    terminal = np.zeros(S, dtype=bool)
    terminal[list(d.get("terminal", []))] = True
    return TabularMdp.from_dense(P, R, float(d["discount"]), terminal, d.get("initial_state"), d.get("name", ""))


def dumps_mdp(mdp: TabularMdp) -> str:
    return json.dumps(mdp_to_dict(mdp), indent=1)


def loads_mdp(text: str) -> TabularMdp:
    return mdp_from_dict(json.loads(text))
