"""Outcome models, expected outcome sequences and outcome-equivalence partitions.

An outcome model attaches a ``d``-vector ``sigma(s, a, s')`` to every
transition of a :class:`~opsr.mdp.TabularMdp`; rewards factor as
``r = sigma . w_r``.  ``sigma`` is stored branch-aligned with the MDP, i.e.
with shape ``(S, A, B, d)``.

Expected outcomes of every action sequence up to a horizon are computed level
by level: for sequence length ``L`` only the final-step expected outcome is
kept, which by prefix consistency determines the whole sequence.
"""
from __future__ import annotations

import hashlib
import itertools
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from opsr.errors import CapExceededError
from opsr.mdp import TabularMdp
from opsr.partition import StateAbstraction

QUANTUM = 1e-9
DEFAULT_CELL_CAP = 50_000_000


@dataclass(frozen=True, eq=False)
class OutcomeModel:
    sigma: np.ndarray  # (S, A, B, d)
    reward_weights: np.ndarray  # (d,)
    labels: tuple = ()
    # components used by option feature maps / stories (default: all)
    feature_components: tuple | None = None

    def __post_init__(self):
        sigma = np.array(self.sigma, dtype=float)
        if sigma.ndim != 4:
            raise ValueError("sigma must have shape (S, A, B, d)")
        w = np.array(self.reward_weights, dtype=float).reshape(-1)
        if w.shape[0] != sigma.shape[3]:
            raise ValueError(f"reward_weights has length {w.shape[0]}, sigma has d={sigma.shape[3]}")
        sigma.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "reward_weights", w)
        labels = tuple(self.labels) or tuple(f"o{i}" for i in range(w.shape[0]))
        if len(labels) != w.shape[0]:
            raise ValueError("one label per outcome component required")
        object.__setattr__(self, "labels", labels)
        if self.feature_components is not None:
            object.__setattr__(self, "feature_components", tuple(int(i) for i in self.feature_components))

    @property
    def dim(self) -> int:
        return self.sigma.shape[3]

    @classmethod
    def from_dense(cls, mdp: TabularMdp, sigma_dense, reward_weights, labels=(), feature_components=None):
        """Build from a dense ``(S, A, S, d)`` outcome tensor."""
        sd = np.asarray(sigma_dense, dtype=float)
        S, A, B = mdp.next_states.shape
        s_idx = np.arange(S)[:, None, None]
        a_idx = np.arange(A)[None, :, None]
        sig = sd[s_idx, a_idx, mdp.next_states]
        sig = np.where((mdp.probs > 0)[..., None], sig, 0.0)
        return cls(sig, reward_weights, labels, feature_components)

    def expected(self, mdp: TabularMdp) -> np.ndarray:
        """Expected one-step outcome ``(S, A, d)``."""
        return np.einsum("sab,sabd->sad", mdp.probs, self.sigma)

    def select(self, components: Sequence[int] | None) -> "OutcomeModel":
        """Outcome model restricted to some components (reward weights follow)."""
        if components is None:
            return self
        idx = list(components)
        return OutcomeModel(
            self.sigma[..., idx], self.reward_weights[idx], tuple(self.labels[i] for i in idx)
        )

    def feature_model(self) -> "OutcomeModel":
        return self.select(self.feature_components)

    def to_dict(self) -> dict:
        return {
            "reward_weights": [repr(float(x)) for x in self.reward_weights],
            "labels": list(self.labels),
            "feature_components": None if self.feature_components is None else list(self.feature_components),
            "sigma_shape": list(self.sigma.shape),
            "sigma": [repr(float(x)) for x in self.sigma.ravel()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OutcomeModel":
        sig = np.array([float(x) for x in d["sigma"]]).reshape(d["sigma_shape"])
        return cls(sig, [float(x) for x in d["reward_weights"]], tuple(d["labels"]), d.get("feature_components"))


def _check_compatible(mdp: TabularMdp, om: OutcomeModel) -> None:
    if om.sigma.shape[:3] != mdp.next_states.shape:
        raise ValueError(
            f"outcome model shape {om.sigma.shape[:3]} does not match MDP successor layout {mdp.next_states.shape}"
        )


def check_reward_decomposition(mdp: TabularMdp, om: OutcomeModel, tol: float = 1e-9) -> bool:
    """True iff ``r = sigma . w_r`` on every transition with positive probability."""
    _check_compatible(mdp, om)
    predicted = om.sigma @ om.reward_weights
    live = mdp.probs > 0
    return bool(np.all(np.abs(predicted - mdp.rewards)[live] <= tol))


def reward_decomposition_violations(mdp: TabularMdp, om: OutcomeModel, tol: float = 1e-9) -> list[tuple]:
    _check_compatible(mdp, om)
    err = np.abs(om.sigma @ om.reward_weights - mdp.rewards)
    bad = np.argwhere((mdp.probs > 0) & (err > tol))
    return [(int(s), int(a), int(mdp.next_states[s, a, b]), float(err[s, a, b])) for s, a, b in bad]


def _check_sequence(mdp: TabularMdp, s: int, aseq: Sequence[int]) -> None:
    if not 0 <= s < mdp.n_states:
        raise IndexError(f"state {s} out of range")
    if len(aseq) == 0:
        raise ValueError("action sequence must be nonempty")
    for a in aseq:
        if not 0 <= a < mdp.n_actions:
            raise IndexError(f"action {a} out of range")


def expected_outcome_sequence(mdp: TabularMdp, om: OutcomeModel, s: int, aseq: Sequence[int]) -> np.ndarray:
    """Per-step expected outcomes ``(len(aseq), d)`` of a fixed action sequence from ``s``."""
    _check_compatible(mdp, om)
    _check_sequence(mdp, s, aseq)
    exp1 = om.expected(mdp)
    dist = np.zeros(mdp.n_states)
    dist[s] = 1.0
    out = np.empty((len(aseq), om.dim))
    for j, a in enumerate(aseq):
        out[j] = dist @ exp1[:, a, :]
        dist = mdp.push(dist, a)
    return out


def outcome_sequence_distribution(
    mdp: TabularMdp,
    om: OutcomeModel,
    s: int,
    aseq: Sequence[int],
    resolution: float = QUANTUM,
    max_len: int = 12,
) -> dict:
    """Distribution over realised (quantised) outcome sequences.

    Keys are tuples of per-step outcome tuples, rounded to ``resolution``.
    """
    _check_compatible(mdp, om)
    _check_sequence(mdp, s, aseq)
    if len(aseq) > max_len:
        raise CapExceededError(f"sequence length {len(aseq)} exceeds cap {max_len}")
    # frontier: (state, outcome-prefix) -> probability
    frontier: dict = {(s, ()): 1.0}
    for a in aseq:
        nxt: dict = {}
        for (st, prefix), p in frontier.items():
            for b in range(mdp.n_branches):
                q = mdp.probs[st, a, b]
                if q <= 0:
                    continue
                o = tuple(float(x) for x in np.round(om.sigma[st, a, b] / resolution) * resolution)
                key = (int(mdp.next_states[st, a, b]), prefix + (o,))
                nxt[key] = nxt.get(key, 0.0) + p * q
        frontier = nxt
    dist: dict = {}
    for (_, seq), p in frontier.items():
        dist[seq] = dist.get(seq, 0.0) + p
    return dist


def outcome_levels(
    mdp: TabularMdp,
    om: OutcomeModel,
    horizon: int,
    states: Sequence[int] | None = None,
    cell_cap: int = DEFAULT_CELL_CAP,
):
    """Yield, for ``L = 1..horizon``, the final-step expected outcomes of every length-``L`` sequence.

    Each yielded array has shape ``(|A|**L, n, d)`` for the ``n`` requested
    start states; sequences are in lexicographic order, first action most
    significant.
    """
    _check_compatible(mdp, om)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    A = mdp.n_actions
    starts = np.arange(mdp.n_states) if states is None else np.asarray(states, dtype=np.int64)
    n = len(starts)
    exp1 = om.expected(mdp)  # (S, A, d)
    d = exp1.shape[2]
    if mdp.is_deterministic():
        succ = mdp.successor()
        if A ** horizon * n * max(d, 1) > cell_cap:
            raise CapExceededError(f"{A}**{horizon} sequences x {n} states exceeds cap {cell_cap}")
        cur = starts[None, :]
        for _ in range(horizon):
            vals = exp1[cur]  # (P, n, A, d)
            yield vals.transpose(0, 2, 1, 3).reshape(-1, n, d)
            cur = succ[cur].transpose(0, 2, 1).reshape(-1, n)
        return
    S = mdp.n_states
    if A ** (horizon - 1) * n * S > cell_cap:
        raise CapExceededError(
            f"stochastic propagation of {A}**{horizon - 1} sequences x {n} states x {S} successors exceeds cap {cell_cap}"
        )
    P = mdp.transition
    dist = np.zeros((1, n, S))
    dist[0, np.arange(n), starts] = 1.0
    for level in range(horizon):
        vals = np.einsum("pns,sad->pand", dist, exp1)
        yield vals.reshape(-1, n, d)
        if level + 1 < horizon:
            dist = np.einsum("pns,sat->pant", dist, P).reshape(-1, n, S)


def quantize(x: np.ndarray, resolution: float = QUANTUM) -> np.ndarray:
    q = np.rint(np.asarray(x) / resolution).astype(np.int64)
    return q


@dataclass(frozen=True)
class OutcomeFingerprint:
    horizon: int
    digest: bytes
    resolution: float = field(default=QUANTUM, compare=False)

    @property
    def hex(self) -> str:
        return self.digest.hex()

    def __str__(self) -> str:
        return self.hex


def _header(horizon: int, n_actions: int, d: int, resolution: float) -> bytes:
    return struct.pack("<iiid", horizon, n_actions, d, resolution)


def _digest_streams(levels_q: list[np.ndarray], header: bytes) -> list[bytes]:
    n = levels_q[0].shape[1]
    hashers = [hashlib.sha256(header) for _ in range(n)]
    for q in levels_q:
        per_state = np.ascontiguousarray(q.transpose(1, 0, 2))
        for i in range(n):
            hashers[i].update(per_state[i].tobytes())
    return [h.digest() for h in hashers]


def _merkle_keys(mdp: TabularMdp, om: OutcomeModel, horizon: int, resolution: float) -> np.ndarray:
    """Interned ids such that equal id at ``horizon`` implies identical outcome trees.

    Only valid for deterministic MDPs.
    """
    succ = mdp.successor()
    q1 = quantize(om.expected(mdp), resolution)  # (S, A, d)
    S, A, d = q1.shape
    local = np.zeros(S, dtype=np.int64)
    for _ in range(horizon):
        rows = np.concatenate([q1.reshape(S, A * d), local[succ]], axis=1)
        _, local = np.unique(rows, axis=0, return_inverse=True)
        local = local.reshape(-1)
    return local


def fingerprints(
    mdp: TabularMdp,
    om: OutcomeModel,
    horizon: int,
    states: Sequence[int] | None = None,
    resolution: float = QUANTUM,
    cell_cap: int = DEFAULT_CELL_CAP,
) -> list[OutcomeFingerprint]:
    """Fingerprints of several states at once.

    The hashed stream for a state is a fixed header followed by the quantised
    final-step expected outcome of every sequence of length ``1..horizon``,
    lengths in increasing order and sequences in lexicographic order.  For
    deterministic MDPs, states with identical outcome trees are hashed once.
    """
    starts = list(range(mdp.n_states)) if states is None else [int(s) for s in states]
    if not starts:
        return []
    header = _header(horizon, mdp.n_actions, om.dim, resolution)
    if mdp.is_deterministic():
        keys = _merkle_keys(mdp, om, horizon, resolution)
        rep: dict = {}
        for s in starts:
            rep.setdefault(int(keys[s]), s)
        reps = list(rep.values())
        levels = [quantize(v, resolution) for v in outcome_levels(mdp, om, horizon, reps, cell_cap)]
        digests = dict(zip(rep.keys(), _digest_streams(levels, header)))
        return [OutcomeFingerprint(horizon, digests[int(keys[s])], resolution) for s in starts]
    levels = [quantize(v, resolution) for v in outcome_levels(mdp, om, horizon, starts, cell_cap)]
    return [OutcomeFingerprint(horizon, dg, resolution) for dg in _digest_streams(levels, header)]


def fingerprint_reference(
    mdp: TabularMdp, om: OutcomeModel, s: int, horizon: int, resolution: float = QUANTUM, seq_cap: int = 1 << 20
) -> OutcomeFingerprint:
    """Fingerprint of one state computed sequence by sequence (slow reference path)."""
    n_seq = sum(mdp.n_actions**L for L in range(1, horizon + 1))
    if n_seq > seq_cap:
        raise CapExceededError(f"{n_seq} sequences exceeds cap {seq_cap}")
    h = hashlib.sha256(_header(horizon, mdp.n_actions, om.dim, resolution))
    for L in range(1, horizon + 1):
        for aseq in itertools.product(range(mdp.n_actions), repeat=L):
            last = expected_outcome_sequence(mdp, om, s, aseq)[-1]
            h.update(quantize(last, resolution).tobytes())
    return OutcomeFingerprint(horizon, h.digest(), resolution)


def fingerprint(
    mdp: TabularMdp, om: OutcomeModel, s: int, horizon: int, resolution: float = QUANTUM, cell_cap: int = DEFAULT_CELL_CAP
) -> OutcomeFingerprint:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if not 0 <= s < mdp.n_states:
        raise IndexError(f"state {s} out of range")
    return fingerprints(mdp, om, horizon, [s], resolution, cell_cap)[0]


def outcome_equivalent(taskA, sA: int, taskB, sB: int, horizon: int, tol: float = 1e-9) -> bool:
    """Whether two states have matching expected outcome sequences up to ``horizon``."""
    mA, oA = taskA
    mB, oB = taskB
    if mA.n_actions != mB.n_actions:
        raise ValueError(f"action sets differ: {mA.n_actions} vs {mB.n_actions}")
    if oA.dim != oB.dim:
        raise ValueError(f"outcome dimensions differ: {oA.dim} vs {oB.dim}")
    for va, vb in zip(outcome_levels(mA, oA, horizon, [sA]), outcome_levels(mB, oB, horizon, [sB])):
        if np.max(np.abs(va - vb)) > tol:
            return False
    return True


def minimal_outcome_equivalent_abstraction(
    mdp: TabularMdp,
    om: OutcomeModel,
    horizon: int,
    resolution: float = QUANTUM,
    distinguish_terminal: bool = False,
    cell_cap: int = DEFAULT_CELL_CAP,
) -> StateAbstraction:
    """Partition states by fingerprint; class labels are fingerprint hex strings.

    With ``distinguish_terminal`` terminal states get a label of their own even
    when their (all-zero) outcome sequences coincide with a non-terminal state.
    """
    fps = fingerprints(mdp, om, horizon, None, resolution, cell_cap)
    labels = [f.hex for f in fps]
    if distinguish_terminal:
        labels = [lab + ":T" if mdp.terminal[s] else lab for s, lab in enumerate(labels)]
    return StateAbstraction(tuple(labels))


def terminal_outcome_features(mdp: TabularMdp, om: OutcomeModel, horizon: int, states=None, cell_cap=DEFAULT_CELL_CAP):
    """Concatenated final-step expected outcomes, shape ``(n, d * sum_L |A|**L)``."""
    blocks = [v.transpose(1, 0, 2).reshape(v.shape[1], -1) for v in outcome_levels(mdp, om, horizon, states, cell_cap)]
    return np.concatenate(blocks, axis=1)
