"""Outcome-predictive state representations (OPSR) and low-dimensional views of them.

Two feature layouts are offered for horizon ``k``:

``full_stack``
    every exact-length-``k`` action sequence contributes its ``k`` per-step
    expected outcome vectors (length ``|A|**k * k * d``).
``terminal_up_to``
    every sequence of length ``1..k`` contributes only its final-step expected
    outcome (length ``d * sum_i |A|**i``).

Both induce the same partition of states.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from opsr.errors import CapExceededError
from opsr.mdp import TabularMdp
from opsr.outcomes import DEFAULT_CELL_CAP, OutcomeModel, minimal_outcome_equivalent_abstraction, outcome_levels
from opsr.partition import StateAbstraction

VARIANTS = ("full_stack", "terminal_up_to")
DEFAULT_FEATURE_CAP = 2_000_000


@dataclass(frozen=True)
class OpsrVector:
    horizon: int
    variant: str
    values: np.ndarray


def opsr_length(n_actions: int, d: int, k: int, variant: str) -> int:
    if variant == "full_stack":
        return n_actions**k * k * d
    if variant == "terminal_up_to":
        return d * sum(n_actions**i for i in range(1, k + 1))
    raise ValueError(f"unknown OPSR variant {variant!r}")


def opsr_matrix(
    mdp: TabularMdp,
    om: OutcomeModel,
    k: int,
    variant: str = "terminal_up_to",
    states: Sequence[int] | None = None,
    cap: int = DEFAULT_FEATURE_CAP,
) -> np.ndarray:
    """OPSR rows for several states, shape ``(n, length)``."""
    if k < 1:
        raise ValueError("horizon must be >= 1")
    length = opsr_length(mdp.n_actions, om.dim, k, variant)
    if length > cap:
        raise CapExceededError(f"OPSR length {length} exceeds cap {cap}")
    levels = list(outcome_levels(mdp, om, k, states, max(DEFAULT_CELL_CAP, cap)))
    n = levels[0].shape[1]
    if variant == "terminal_up_to":
        return np.concatenate([v.transpose(1, 0, 2).reshape(n, -1) for v in levels], axis=1)
    A = mdp.n_actions
    seq = np.arange(A**k)
    # entry j of a sequence is the final outcome of its length-j prefix
    steps = [levels[j - 1][seq // A ** (k - j)] for j in range(1, k + 1)]  # each (A^k, n, d)
    stacked = np.stack(steps, axis=1)  # (A^k, k, n, d)
    return stacked.transpose(2, 0, 1, 3).reshape(n, -1)


def opsr_full(mdp: TabularMdp, om: OutcomeModel, s: int, k: int, cap: int = DEFAULT_FEATURE_CAP) -> OpsrVector:
    return OpsrVector(k, "full_stack", opsr_matrix(mdp, om, k, "full_stack", [s], cap)[0])


def opsr_terminal_up_to(mdp: TabularMdp, om: OutcomeModel, s: int, k: int, cap: int = DEFAULT_FEATURE_CAP) -> OpsrVector:
    return OpsrVector(k, "terminal_up_to", opsr_matrix(mdp, om, k, "terminal_up_to", [s], cap)[0])


def partition_of_rows(rows: np.ndarray, resolution: float = 1e-9) -> StateAbstraction:
    """Group identical (quantised) rows."""
    q = np.rint(np.asarray(rows) / resolution).astype(np.int64)
    _, inv = np.unique(q, axis=0, return_inverse=True)
    return StateAbstraction(tuple(int(i) for i in inv.reshape(-1)))


def union_partition(tasks: Sequence[tuple], horizon: int, states_per_task: Sequence | None = None) -> StateAbstraction:
    """Fingerprint partition over the disjoint union of several tasks' states.

    ``tasks`` holds ``(mdp, outcome_model)`` pairs; ``states_per_task``
    optionally restricts which states of each task take part.
    """
    labels: list = []
    for i, (mdp, om) in enumerate(tasks):
        phi = minimal_outcome_equivalent_abstraction(mdp, om, horizon)
        keep = range(mdp.n_states) if states_per_task is None else states_per_task[i]
        labels.extend(phi.class_of[s] for s in keep)
    return StateAbstraction(tuple(labels))


def finest_horizon(mdp: TabularMdp | Sequence[tuple], om: OutcomeModel | None = None, k_max: int = 8) -> int:
    """Smallest ``k`` whose partition equals the one at ``k + 1`` (``k_max`` if none).

    Pass either a single ``(mdp, om)`` or a list of task pairs as ``mdp`` with
    ``om=None`` to work on the union of several tasks.
    """
    tasks = [(mdp, om)] if om is not None else list(mdp)
    prev = union_partition(tasks, 1)
    for k in range(1, k_max):
        nxt = union_partition(tasks, k + 1)
        if prev.same_partition(nxt):
            return k
        prev = nxt
    return k_max


@dataclass(frozen=True)
class PcaResult:
    mean: np.ndarray
    components: np.ndarray  # (n_components, D)
    explained_variance: np.ndarray  # (n_components,)
    total_variance: float
    reduced: np.ndarray  # (n, n_components)

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(x) - self.mean) @ self.components.T


def pca_reduce(data: np.ndarray, variance_fraction: float = 0.99) -> PcaResult:
    """Centred PCA keeping the fewest components whose variance share reaches the fraction.

    Identical rows give zero variance and therefore zero components.
    """
    X = np.atleast_2d(np.asarray(data, dtype=float))
    if not 0 < variance_fraction <= 1:
        raise ValueError("variance_fraction must be in (0, 1]")
    if X.shape[0] < 1:
        raise ValueError("need at least one row")
    mean = X.mean(axis=0)
    Xc = X - mean
    n = X.shape[0]
    _, sv, vt = np.linalg.svd(Xc, full_matrices=False)
    var = sv**2 / max(n - 1, 1)
    total = float(var.sum())
    scale = max(1.0, float(np.abs(X).max(initial=0.0)))
    if total <= (1e-12 * scale) ** 2 * X.shape[1]:
        return PcaResult(mean, np.zeros((0, X.shape[1])), np.zeros(0), 0.0, np.zeros((n, 0)))
    share = np.cumsum(var) / total
    m = int(np.searchsorted(share, variance_fraction - 1e-12) + 1)
    m = min(m, len(var))
    comps = vt[:m].copy()
    # sign convention: largest-magnitude loading positive
    flip = np.sign(comps[np.arange(m), np.argmax(np.abs(comps), axis=1)])
    comps *= flip[:, None]
    reduced = Xc @ comps.T
    kept = float(np.sum(reduced**2) / max(n - 1, 1))
    if kept < variance_fraction * total * (1 - 1e-9) - 1e-12:
        raise AssertionError("retained variance below requested fraction")
    return PcaResult(mean, comps, var[:m], total, reduced)


@dataclass(frozen=True)
class Embedding:
    coords: np.ndarray  # (n, out_dims)
    component: np.ndarray  # (n,) connected-component label per point
    eigenvalues: tuple  # per component, the eigenvalues used


def _sign_fix(vecs: np.ndarray) -> np.ndarray:
    for j in range(vecs.shape[1]):
        nz = np.nonzero(np.abs(vecs[:, j]) > 1e-10)[0]
        if nz.size and vecs[nz[0], j] < 0:
            vecs[:, j] = -vecs[:, j]
    return vecs


def knn_graph(points: np.ndarray, knn: int) -> csr_matrix:
    """Symmetric binary k-nearest-neighbour graph (ties broken by index)."""
    n = points.shape[0]
    dist = cdist(points, points)
    np.fill_diagonal(dist, np.inf)
    k = min(knn, n - 1)
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    W = csr_matrix((np.ones(n * k), (rows, order.ravel())), shape=(n, n))
    W = ((W + W.T) > 0).astype(float)
    return W


def laplacian_eigenmap(points: np.ndarray, knn: int = 8, out_dims: int = 2) -> Embedding:
    """Unnormalised-Laplacian eigenmap on a symmetric kNN graph.

    Duplicate points are collapsed first so they embed identically.  Each
    connected component is embedded on its own; ``component`` reports which
    one a point belongs to.  Components too small to supply ``out_dims``
    nontrivial eigenvectors are zero-padded.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if knn < 1:
        raise ValueError("knn must be >= 1")
    if P.shape[0] < out_dims + 2:
        raise ValueError(f"need at least out_dims + 2 = {out_dims + 2} points, got {P.shape[0]}")
    uniq, inverse = np.unique(P, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    n = uniq.shape[0]
    coords = np.zeros((n, out_dims))
    if n == 1:
        return Embedding(coords[inverse], np.zeros(P.shape[0], dtype=np.int64), ((),))
    W = knn_graph(uniq, knn)
    n_comp, labels = connected_components(W, directed=False)
    eigs = []
    for c in range(n_comp):
        idx = np.nonzero(labels == c)[0]
        Wc = W[idx][:, idx].toarray()
        L = np.diag(Wc.sum(axis=1)) - Wc
        vals, vecs = np.linalg.eigh(L)
        take = min(out_dims, len(idx) - 1)
        sub = vecs[:, 1 : 1 + take]
        coords[idx, :take] = sub
        eigs.append(tuple(float(x) for x in vals[1 : 1 + take]))
    # order component labels by first occurrence in the input
    first = {}
    for lab in labels[inverse]:
        first.setdefault(int(lab), len(first))
    comp = np.array([first[int(l)] for l in labels[inverse]], dtype=np.int64)
    ordered = [None] * n_comp
    for lab, pos in first.items():
        ordered[pos] = eigs[lab]
    full = coords[inverse]
    for c in range(n_comp):
        mask = comp == c
        full[mask] = _sign_fix(full[mask])
    return Embedding(full, comp, tuple(ordered))


def embedding_csv_rows(embedding: Embedding, state_ids: Sequence, task_ids: Sequence) -> list[list]:
    rows = [["state_id", "task_id"] + [f"x{i}" for i in range(embedding.coords.shape[1])]]
    for sid, tid, c in zip(state_ids, task_ids, embedding.coords):
        rows.append([sid, tid] + [repr(float(x)) for x in c])
    return rows
