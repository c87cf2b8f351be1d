"""State abstractions, abstract MDPs, derived policies and transfer checks.

Abstract policies are arrays whose rows follow ``phi.labels`` of the
abstraction they are defined on.  Cross-task operations line classes up by
label, so abstractions built from outcome fingerprints compare directly.

The transfer checks are exhaustive over deterministic policies and refuse to
run beyond their caps.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from opsr.errors import CapExceededError
from opsr.mdp import TabularMdp, deterministic_policy, policy_evaluation, q_values, solve_optimal
from opsr.outcomes import OutcomeModel
from opsr.partition import StateAbstraction

__all__ = [
    "StateAbstraction",
    "AbstractMdp",
    "uniform_weighting",
    "first_member_weighting",
    "random_weighting",
    "validate_weighting",
    "build_abstract_mdp",
    "abstract_outcome_model",
    "derive_policy",
    "partially_derive",
    "transfer_cover",
    "compare_coarseness",
    "enumerate_derived_deterministic",
    "has_greater_transfer_value",
    "optimal_abstract_policies",
    "check_value_compatibility",
    "check_transfer_optimality",
]

DEFAULT_POLICY_CAP = 4096


# -- weightings ---------------------------------------------------------------

def uniform_weighting(phi: StateAbstraction) -> np.ndarray:
    sizes = np.bincount(phi.index, minlength=phi.n_classes)
    return 1.0 / sizes[phi.index]


def first_member_weighting(phi: StateAbstraction) -> np.ndarray:
    w = np.zeros(phi.n_states)
    seen = set()
    for s, c in enumerate(phi.index):
        if c not in seen:
            seen.add(c)
            w[s] = 1.0
    return w


def random_weighting(phi: StateAbstraction, rng: np.random.Generator) -> np.ndarray:
    raw = rng.random(phi.n_states) + 1e-3
    sums = np.bincount(phi.index, weights=raw, minlength=phi.n_classes)
    return raw / sums[phi.index]


def validate_weighting(phi: StateAbstraction, w: np.ndarray, tol: float = 1e-12) -> list[str]:
    w = np.asarray(w, dtype=float)
    problems = []
    if w.shape != (phi.n_states,):
        return [f"weighting has shape {w.shape}, expected ({phi.n_states},)"]
    if np.any(w < 0):
        problems.append("negative weight")
    sums = np.bincount(phi.index, weights=w, minlength=phi.n_classes)
    for c in np.nonzero(np.abs(sums - 1.0) > tol)[0]:
        problems.append(f"class {phi.labels[c]!r} weights sum to {sums[c]:.15g}")
    return problems


# -- abstract MDP -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AbstractMdp:
    mdp: TabularMdp
    phi: StateAbstraction
    weights: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def labels(self) -> tuple:
        return self.phi.labels


def _aggregate(mdp: TabularMdp, phi: StateAbstraction, w: np.ndarray, values: np.ndarray | None):
    """Weighted class-to-class sums of ``p`` (and of ``p * values`` if given)."""
    X, A = phi.n_classes, mdp.n_actions
    P = np.zeros((X, A, X))
    V = None if values is None else np.zeros((X, A, X) + values.shape[3:])
    src = phi.index
    for b in range(mdp.n_branches):
        dst = phi.index[mdp.next_states[:, :, b]]  # (S, A)
        wp = w[:, None] * mdp.probs[:, :, b]
        for a in range(A):
            np.add.at(P, (src, a, dst[:, a]), wp[:, a])
            if V is not None:
                contrib = wp[:, a].reshape((-1,) + (1,) * (values.ndim - 3)) * values[:, a, b]
                np.add.at(V, (src, a, dst[:, a]), contrib)
    return P, V


def build_abstract_mdp(mdp: TabularMdp, phi: StateAbstraction, w: np.ndarray, provenance: dict | None = None) -> AbstractMdp:
    """Abstract MDP over the classes of ``phi`` with ``w``-weighted dynamics.

    Per-transition abstract rewards are the ``w * p``-weighted means of the
    ground rewards, so the expected abstract reward ``r_phi(x, a)`` is the
    ``w``-weighted mean of ``r(s, a)``.  A class is terminal iff all of its
    members are terminal.
    """
    if phi.n_states != mdp.n_states:
        raise ValueError("abstraction and MDP have different state counts")
    w = np.asarray(w, dtype=float)
    problems = validate_weighting(phi, w)
    if problems:
        raise ValueError("invalid weighting: " + "; ".join(problems))
    P, RP = _aggregate(mdp, phi, w, mdp.rewards[..., None])
    RP = RP[..., 0]
    R = np.divide(RP, P, out=np.zeros_like(RP), where=P > 0)
    terminal = np.ones(phi.n_classes, dtype=bool)
    np.logical_and.at(terminal, phi.index, mdp.terminal)
    init = None if mdp.initial_state is None else int(phi.index[mdp.initial_state])
    prov = {"ground": mdp.name, "n_classes": phi.n_classes}
    prov.update(provenance or {})
    amdp = TabularMdp.from_dense(P, R, mdp.discount, terminal, init, name=f"abstract({mdp.name})")
    return AbstractMdp(amdp, phi, w, prov)


def abstract_outcome_model(mdp: TabularMdp, om: OutcomeModel, phi: StateAbstraction, w: np.ndarray, abstract: AbstractMdp | None = None) -> OutcomeModel:
    """Outcome model of the abstract MDP, aggregated with the same weighting."""
    if abstract is None:
        abstract = build_abstract_mdp(mdp, phi, w)
    w = np.asarray(w, dtype=float)
    P, SP = _aggregate(mdp, phi, w, om.sigma)
    sig = np.divide(SP, P[..., None], out=np.zeros_like(SP), where=P[..., None] > 0)
    return OutcomeModel.from_dense(abstract.mdp, sig, om.reward_weights, om.labels, om.feature_components)


# -- derived policies ---------------------------------------------------------

def derive_policy(abstract_policy: np.ndarray, phi: StateAbstraction) -> np.ndarray:
    """Ground policy that plays ``abstract_policy`` row ``phi(s)`` at each ``s``."""
    pi = np.asarray(abstract_policy, dtype=float)
    if pi.shape[0] != phi.n_classes:
        raise ValueError(f"abstract policy has {pi.shape[0]} rows, abstraction has {phi.n_classes} classes")
    return pi[phi.index].copy()


def transfer_cover(phi_alpha: StateAbstraction, phi_beta: StateAbstraction) -> np.ndarray:
    """States of the target task whose class also occurs in the source abstraction."""
    return np.array([s for s, lab in enumerate(phi_beta.class_of) if lab in phi_alpha], dtype=np.int64)


def partially_derive(
    abstract_policy: np.ndarray,
    phi_alpha: StateAbstraction,
    phi_beta: StateAbstraction,
    default: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Derived rule on the transfer cover, ``default`` elsewhere.  Returns (policy, cover)."""
    pi = np.asarray(abstract_policy, dtype=float)
    if pi.shape[0] != phi_alpha.n_classes:
        raise ValueError("abstract policy rows must follow phi_alpha.labels")
    out = np.array(default, dtype=float, copy=True)
    if out.shape[0] != phi_beta.n_states:
        raise ValueError("default policy must cover every target state")
    cover = transfer_cover(phi_alpha, phi_beta)
    for s in cover:
        out[s] = pi[phi_alpha.position(phi_beta.class_of[s])]
    return out, cover


def _refines(p1: StateAbstraction, p2: StateAbstraction, states: Sequence[int]) -> bool:
    """``p1(s) = p1(t) => p2(s) = p2(t)`` for all s, t in ``states``."""
    image: dict = {}
    for s in states:
        k = p1.class_of[s]
        v = p2.class_of[s]
        if image.setdefault(k, v) != v:
            return False
    return True


def compare_coarseness(phi1: StateAbstraction, phi2: StateAbstraction, states: Sequence[int] | None = None) -> str:
    """Relation of ``phi1`` to ``phi2``.

    Returns ``isomorphic`` when both induce the same partition,
    ``strictly_finer`` / ``strictly_coarser`` when one refines the other, and
    ``incomparable`` otherwise.  Restricting to ``states`` gives the
    conditional (transfer-cover) version.  Because strictness only excludes
    isomorphism, non-strict ``finer``/``coarser`` collapse into these cases.
    """
    if phi1.n_states != phi2.n_states:
        raise ValueError("abstractions are over different state sets")
    idx = range(phi1.n_states) if states is None else list(states)
    f = _refines(phi1, phi2, idx)
    c = _refines(phi2, phi1, idx)
    if f and c:
        return "isomorphic"
    if f:
        return "strictly_finer"
    if c:
        return "strictly_coarser"
    return "incomparable"


def is_finer_eq(phi1: StateAbstraction, phi2: StateAbstraction, states=None) -> bool:
    return compare_coarseness(phi1, phi2, states) in ("isomorphic", "strictly_finer")


def enumerate_derived_deterministic(
    phi: StateAbstraction, mdp_or_actions, cap: int = DEFAULT_POLICY_CAP
) -> Iterator[np.ndarray]:
    """Every deterministic derived policy, each once, as an ``(S, A)`` one-hot array."""
    A = mdp_or_actions if isinstance(mdp_or_actions, (int, np.integer)) else mdp_or_actions.n_actions
    count = A**phi.n_classes
    if count > cap:
        raise CapExceededError(f"{A}**{phi.n_classes} = {count} derived policies exceeds cap {cap}")
    for choice in itertools.product(range(A), repeat=phi.n_classes):
        yield deterministic_policy(np.asarray(choice)[phi.index], A)


def derived_action_tuples(phi: StateAbstraction, n_actions: int, cap: int = DEFAULT_POLICY_CAP) -> set:
    """Deterministic derived policies as ground action tuples (for set comparisons)."""
    return {tuple(np.argmax(p, axis=1)) for p in enumerate_derived_deterministic(phi, n_actions, cap)}


def has_greater_transfer_value(
    phi: StateAbstraction,
    phi_prime: StateAbstraction,
    mdp: TabularMdp,
    tol: float = 1e-9,
    states: Sequence[int] | None = None,
    cap: int = DEFAULT_POLICY_CAP,
) -> str:
    """Compare transfer value of ``phi`` against ``phi_prime`` on ``mdp``.

    ``strictly_greater``: some derived policy of ``phi`` is at least as good as
    every derived policy of ``phi_prime`` everywhere and differs from each of
    them somewhere.  ``greater``: the non-strict relation holds.
    ``not_greater``: only the reverse relation holds.  ``incomparable``:
    neither holds.  ``states`` restricts comparisons to a subset.
    """
    idx = np.arange(mdp.n_states) if states is None else np.asarray(states, dtype=np.int64)
    vals = np.array([policy_evaluation(mdp, p)[idx] for p in enumerate_derived_deterministic(phi, mdp, cap)])
    vals_p = np.array([policy_evaluation(mdp, p)[idx] for p in enumerate_derived_deterministic(phi_prime, mdp, cap)])

    def dominates(x: np.ndarray, y: np.ndarray) -> tuple[bool, bool]:
        # x[i] >= every y[j] (and strictly different from each)
        diff = x[:, None, :] - y[None, :, :]
        ge = np.all(diff >= -tol, axis=2)
        ne = np.any(diff > tol, axis=2)
        weak = np.all(ge, axis=1)
        strict = np.all(ge & ne, axis=1)
        return bool(weak.any()), bool(strict.any())

    fwd, fwd_strict = dominates(vals, vals_p)
    bwd, _ = dominates(vals_p, vals)
    if fwd_strict:
        return "strictly_greater"
    if fwd:
        return "greater"
    if bwd:
        return "not_greater"
    return "incomparable"


# -- transfer optimality ------------------------------------------------------

def optimal_abstract_policies(abstract: AbstractMdp, tol: float = 1e-9, cap: int = DEFAULT_POLICY_CAP):
    """Abstract optimal values and all deterministic optimal abstract policies (as action arrays).

    Terminal classes get action 0 only: actions there affect no value.
    """
    _, v = solve_optimal(abstract.mdp)
    q = q_values(abstract.mdp, v)
    scale = max(1.0, float(np.abs(q).max(initial=0.0)))
    choices = [np.zeros(1, dtype=np.int64) if abstract.mdp.terminal[x] else np.nonzero(q[x] >= q[x].max() - tol * scale)[0]
               for x in range(abstract.mdp.n_states)]
    count = int(np.prod([len(c) for c in choices], dtype=float))
    if count > cap:
        raise CapExceededError(f"{count} optimal abstract policies exceeds cap {cap}")
    return v, [np.array(c, dtype=np.int64) for c in itertools.product(*choices)]


def _defaults(n_states: int, n_actions: int, free: np.ndarray, cap: int):
    """Deterministic default action assignments over the ``free`` states."""
    count = n_actions ** len(free)
    if count > cap:
        raise CapExceededError(f"{count} default policies over {len(free)} off-cover states exceeds cap {cap}")
    for choice in itertools.product(range(n_actions), repeat=len(free)):
        acts = np.zeros(n_states, dtype=np.int64)
        acts[free] = choice
        yield acts


def _partial_values(abstract_actions, abstract: AbstractMdp, ground: TabularMdp, phi_ground: StateAbstraction, cap: int):
    """Yield (default actions, ground values) of each deterministic partially derived policy."""
    A = ground.n_actions
    cover = transfer_cover(abstract.phi, phi_ground)
    mask = np.zeros(ground.n_states, dtype=bool)
    mask[cover] = True
    free = np.nonzero(~mask)[0]
    base = np.zeros(ground.n_states, dtype=np.int64)
    for s in cover:
        base[s] = abstract_actions[abstract.phi.position(phi_ground.class_of[s])]
    for acts in _defaults(ground.n_states, A, free, cap):
        acts = np.where(mask, base, acts)
        yield acts, policy_evaluation(ground, deterministic_policy(acts, A))


def check_value_compatibility(
    abstract_policy: np.ndarray,
    abstract: AbstractMdp,
    ground: TabularMdp,
    phi_ground: StateAbstraction,
    tol: float = 1e-9,
    cap: int = DEFAULT_POLICY_CAP,
    return_witness: bool = False,
):
    """Whether every partially derived policy matches the abstract value on the cover.

    Off-cover defaults range over all deterministic choices; value at a state
    is monotone along any per-state mixture so stochastic defaults add no new
    extremes.
    """
    pi = np.asarray(abstract_policy, dtype=float)
    v_abs = policy_evaluation(abstract.mdp, pi)
    cover = transfer_cover(abstract.phi, phi_ground)
    target = np.array([v_abs[abstract.phi.position(phi_ground.class_of[s])] for s in cover])
    A = ground.n_actions
    cover_mask = np.zeros(ground.n_states, dtype=bool)
    cover_mask[cover] = True
    free = np.nonzero(~cover_mask)[0]
    count = A ** len(free)
    if count > cap:
        raise CapExceededError(f"{count} default policies exceeds cap {cap}")
    derived_rows = pi[[abstract.phi.position(phi_ground.class_of[s]) for s in cover]] if len(cover) else np.zeros((0, A))
    for choice in itertools.product(range(A), repeat=len(free)):
        policy = np.zeros((ground.n_states, A))
        policy[cover] = derived_rows
        policy[free, list(choice)] = 1.0
        v = policy_evaluation(ground, policy)
        err = np.abs(v[cover] - target)
        if err.size and err.max() > tol:
            if return_witness:
                i = int(np.argmax(err))
                return False, {"state": int(cover[i]), "ground_value": float(v[cover[i]]), "abstract_value": float(target[i]),
                               "default_actions": {int(s): int(a) for s, a in zip(free, choice)}}
            return False
    return (True, None) if return_witness else True


def check_transfer_optimality(
    abstract: AbstractMdp,
    ground: TabularMdp,
    phi_ground: StateAbstraction,
    tol: float = 1e-9,
    cap: int = DEFAULT_POLICY_CAP,
) -> tuple[bool, dict | None]:
    """Transfer optimality of an abstract MDP for a ground task.

    Holds iff every optimal deterministic abstract policy is value compatible
    with the ground task and some partially derived policy of it reaches the
    ground optimum on the whole transfer cover.  On failure a witness names
    the abstract policy (as actions per abstract label), a ground state and the
    violated condition.
    """
    _, v_star = solve_optimal(ground)
    _, policies = optimal_abstract_policies(abstract, tol, cap)
    cover = transfer_cover(abstract.phi, phi_ground)
    A = abstract.mdp.n_actions
    for actions in policies:
        pi = deterministic_policy(actions, A)
        named = {str(lab): int(actions[i]) for i, lab in enumerate(abstract.phi.labels)}
        ok, wit = check_value_compatibility(pi, abstract, ground, phi_ground, tol, cap, return_witness=True)
        if not ok:
            wit.update(reason="value_compatibility", abstract_policy=named)
            return False, wit
        best_gap, best_state = np.inf, None
        for _, v in _partial_values(actions, abstract, ground, phi_ground, cap):
            gap = v_star[cover] - v[cover]
            worst = float(gap.max()) if gap.size else 0.0
            if worst <= tol:
                best_gap = worst
                break
            if worst < best_gap:
                best_gap, best_state = worst, int(cover[int(np.argmax(gap))])
        if best_gap > tol:
            return False, {
                "reason": "ground_optimum_not_attained",
                "abstract_policy": named,
                "state": best_state,
                "ground_optimal_value": float(v_star[best_state]),
                "gap": best_gap,
            }
    return True, None
