"""Brute-force property suites for the abstraction and outcome results.

Each ``check_*`` function returns a :class:`SuiteResult`; ``run_all`` runs the
lot with a seed.  Random tasks come from :func:`random_deterministic_task`,
which duplicates the states of a small random core so that genuinely
outcome-equivalent states occur.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from opsr.abstraction import (
    build_abstract_mdp,
    check_transfer_optimality,
    check_value_compatibility,
    derive_policy,
    derived_action_tuples,
    first_member_weighting,
    has_greater_transfer_value,
    is_finer_eq,
    optimal_abstract_policies,
    random_weighting,
    uniform_weighting,
)
from opsr.mdp import TabularMdp, deterministic_policy, is_plannable_up_to, policy_evaluation, validate_mdp
from opsr.outcomes import OutcomeModel, minimal_outcome_equivalent_abstraction
from opsr.partition import StateAbstraction

DISCOUNT = 0.9


@dataclass
class SuiteResult:
    name: str
    cases: int = 0
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.cases > 0 and not self.failures

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" first failure: {self.failures[0]}" if self.failures else ""
        return f"{status} {self.name}: {self.cases} cases, {len(self.failures)} failures{extra}"


def random_deterministic_task(rng: np.random.Generator, max_states: int = 8, max_actions: int = 3, max_d: int = 2,
                              discount: float = DISCOUNT, core=None):
    """Random deterministic task whose states are copies of a smaller core task.

    Each ground state copies a core state; a transition goes to some copy of
    the core successor.  Outcomes are small integers, weights are random and ``r = sigma . w``.
    Passing ``core`` reuses a core from a previous call.
    """
    if core is None:
        m = int(rng.integers(1, max_states + 1))
        A = int(rng.integers(1, max_actions + 1))
        d = int(rng.integers(1, max_d + 1))
        succ = rng.integers(0, m, size=(m, A))
        sig = rng.integers(-1, 2, size=(m, A, d)).astype(float)
        term = rng.random(m) < 0.2
        w = np.round(rng.normal(size=d), 3)
        core = (succ, sig, term, w)
    succ, sig, term, w = core
    m, A = succ.shape
    n = int(rng.integers(m, max(m, max_states) + 1))
    copy_of = np.concatenate([np.arange(m), rng.integers(0, m, size=n - m)])
    copy_of = copy_of[rng.permutation(n)]
    copies = [np.flatnonzero(copy_of == c) for c in range(m)]
    g_succ = np.zeros((n, A), dtype=np.int64)
    g_sig = np.zeros((n, A, sig.shape[2]))
    terminal = term[copy_of]
    for s in range(n):
        c = copy_of[s]
        if terminal[s]:
            g_succ[s] = s
            continue
        for a in range(A):
            g_succ[s, a] = rng.choice(copies[succ[c, a]])
            g_sig[s, a] = sig[c, a]
    rew = g_sig @ w
    start = int(rng.integers(n))
    mdp = TabularMdp.deterministic(g_succ, rew, discount, terminal, start, "random")
    om = OutcomeModel(g_sig[:, :, None, :], w)
    return mdp, om, core


def set_partitions(n: int):
    """All partitions of ``range(n)`` as restricted-growth label tuples."""
    def grow(prefix, top):
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for c in range(top + 2):
            yield from grow(prefix + [c], max(top, c))
    if n == 0:
        yield ()
        return
    yield from grow([0], 0)


def weightings(phi: StateAbstraction, rng: np.random.Generator) -> dict:
    return {"uniform": uniform_weighting(phi), "first_member": first_member_weighting(phi),
            "random": random_weighting(phi, rng)}


def check_transfer_suite(n_tasks: int = 200, seed: int = 0, max_states: int = 8, tol: float = 1e-9,
                         cap: int = 1 << 15) -> SuiteResult:
    """Minimal outcome-equivalent abstractions of deterministic tasks are transfer optimal.

    Each case builds a source and a target from a shared core and abstracts
    both at a horizon equal to the core size: every ground state is
    equivalent to its core state, so the pair has at most that many classes
    and partition refinement settles within that many steps.  It then checks
    value compatibility of every optimal abstract policy and transfer
    optimality on both tasks, under three weightings.
    """
    rng = np.random.default_rng(seed)
    res = SuiteResult("transfer optimality of minimal outcome-equivalent abstractions")
    for i in range(n_tasks):
        src, om_s, core = random_deterministic_task(rng, max_states)
        dst, om_d, _ = random_deterministic_task(rng, max_states, core=core)
        horizon = max(1, core[0].shape[0])
        phi_s = minimal_outcome_equivalent_abstraction(src, om_s, horizon)
        phi_d = minimal_outcome_equivalent_abstraction(dst, om_d, horizon)
        for wname, w in weightings(phi_s, rng).items():
            abstract = build_abstract_mdp(src, phi_s, w)
            _, policies = optimal_abstract_policies(abstract, tol, cap)
            for acts in policies:
                pi = deterministic_policy(acts, src.n_actions)
                for ground, phi_g, role in ((src, phi_s, "source"), (dst, phi_d, "target")):
                    res.cases += 1
                    if not check_value_compatibility(pi, abstract, ground, phi_g, tol, cap):
                        res.failures.append(f"task {i} {wname} {role}: value compatibility, policy {acts.tolist()}")
            for ground, phi_g, role in ((src, phi_s, "source"), (dst, phi_d, "target")):
                res.cases += 1
                ok, wit = check_transfer_optimality(abstract, ground, phi_g, tol, cap)
                if not ok:
                    res.failures.append(f"task {i} {wname} {role}: transfer optimality {wit}")
    return res


def check_control_theorem(max_states: int = 5, max_actions: int = 3) -> SuiteResult:
    """Two states share a class iff every derived policy acts identically on them."""
    res = SuiteResult("same class iff identical derived rows")
    for n in range(1, max_states + 1):
        for A in range(2, max_actions + 1):
            for labels in set_partitions(n):
                phi = StateAbstraction(labels)
                tuples = derived_action_tuples(phi, A)
                for s, t in itertools.combinations(range(n), 2):
                    res.cases += 1
                    same_rows = all(p[s] == p[t] for p in tuples)
                    if (labels[s] == labels[t]) != same_rows:
                        res.failures.append(f"n={n} A={A} phi={labels} pair=({s},{t})")
    return res


def check_coarseness_containment(max_states: int = 5, max_actions: int = 3) -> SuiteResult:
    """``phi1`` finer than or equal to ``phi2`` iff derived(phi2) is a subset of derived(phi1)."""
    res = SuiteResult("finer iff derived-set containment")
    for n in range(1, max_states + 1):
        parts = [StateAbstraction(p) for p in set_partitions(n)]
        for A in range(2, max_actions + 1):
            sets = [derived_action_tuples(p, A) for p in parts]
            for i, j in itertools.product(range(len(parts)), repeat=2):
                res.cases += 1
                if is_finer_eq(parts[i], parts[j]) != (sets[j] <= sets[i]):
                    res.failures.append(f"n={n} A={A} phi1={parts[i].class_of} phi2={parts[j].class_of}")
    return res


def _all_deterministic_mdps(n: int, A: int, rng: np.random.Generator):
    for flat in itertools.product(range(n), repeat=n * A):
        succ = np.array(flat).reshape(n, A)
        rew = rng.integers(-2, 3, size=(n, A)).astype(float)
        yield TabularMdp.deterministic(succ, rew, DISCOUNT, np.zeros(n, bool), 0, "enum")


def check_tradeoff_corollary(seed: int = 0, max_states: int = 4, n_random: int = 30) -> SuiteResult:
    """Strictly greater transfer value rules out being coarser-or-equal and derived-set containment.

    Every abstraction pair is searched on every deterministic two-action
    task with up to 2 states, and on ``n_random`` random tasks (deterministic
    and stochastic) for each larger size up to ``max_states``.
    """
    rng = np.random.default_rng(seed)
    res = SuiteResult("strict transfer value implies not coarser")
    A = 2
    tasks = []
    for n in range(1, min(max_states, 2) + 1):
        tasks.extend(_all_deterministic_mdps(n, A, rng))
    for n in range(3, max_states + 1):
        for k in range(n_random):
            if k % 2 == 0:
                succ = rng.integers(0, n, size=(n, A))
                rew = rng.integers(-2, 3, size=(n, A)).astype(float)
                tasks.append(TabularMdp.deterministic(succ, rew, DISCOUNT, np.zeros(n, bool), 0, "rand"))
            else:
                P = rng.dirichlet(np.ones(n), size=(n, A))
                R = np.broadcast_to(rng.normal(size=(n, A))[:, :, None], (n, A, n)).copy()
                tasks.append(TabularMdp.from_dense(P, R, DISCOUNT, np.zeros(n, bool), 0, "rand"))
    for mdp in tasks:
        parts = [StateAbstraction(p) for p in set_partitions(mdp.n_states)]
        sets = [derived_action_tuples(p, A) for p in parts]
        for i, j in itertools.product(range(len(parts)), repeat=2):
            if i == j:
                continue
            verdict = has_greater_transfer_value(parts[i], parts[j], mdp)
            if verdict != "strictly_greater":
                continue
            res.cases += 1
            if is_finer_eq(parts[j], parts[i]) or sets[i] <= sets[j]:
                res.failures.append(f"phi={parts[i].class_of} phi'={parts[j].class_of} n={mdp.n_states}")
    return res


def check_value_equivalence(n_tasks: int = 50, n_policies: int = 200, seed: int = 0, tol: float = 1e-9) -> SuiteResult:
    """Outcome-equivalent states of a deterministic task have equal values under derived policies."""
    rng = np.random.default_rng(seed)
    res = SuiteResult("equal values at outcome-equivalent states")
    for i in range(n_tasks):
        mdp, om, _ = random_deterministic_task(rng)
        phi = minimal_outcome_equivalent_abstraction(mdp, om, mdp.n_states)
        idx = phi.index
        for _ in range(n_policies):
            abstract_pi = rng.dirichlet(np.ones(mdp.n_actions), size=phi.n_classes)
            v = policy_evaluation(mdp, derive_policy(abstract_pi, phi))
            res.cases += 1
            for c in range(phi.n_classes):
                vals = v[idx == c]
                if vals.max() - vals.min() > tol:
                    res.failures.append(f"task {i} class {c} spread {vals.max() - vals.min():.3g}")
                    break
    return res


def check_abstract_plannability(n_tasks: int = 100, seed: int = 0) -> SuiteResult:
    """Abstract MDPs of minimal outcome-equivalent abstractions stay plannable."""
    rng = np.random.default_rng(seed)
    res = SuiteResult("abstract MDPs stay plannable")
    for i in range(n_tasks):
        mdp, om, _ = random_deterministic_task(rng, max_states=6, max_actions=2)
        phi = minimal_outcome_equivalent_abstraction(mdp, om, mdp.n_states)
        for wname, w in weightings(phi, rng).items():
            abstract = build_abstract_mdp(mdp, phi, w)
            res.cases += 1
            problems = validate_mdp(abstract.mdp)
            if problems or not is_plannable_up_to(abstract.mdp, horizon=4):
                res.failures.append(f"task {i} {wname}: {problems or 'not plannable'}")
    return res


def run_all(seed: int = 0, max_states: int = 8, n_tasks: int = 200) -> list:
    return [
        check_transfer_suite(n_tasks, seed, max_states),
        check_control_theorem(min(max_states, 5)),
        check_coarseness_containment(min(max_states, 5)),
        check_tradeoff_corollary(seed, min(max_states, 4)),
        check_value_equivalence(seed=seed),
        check_abstract_plannability(seed=seed),
    ]
