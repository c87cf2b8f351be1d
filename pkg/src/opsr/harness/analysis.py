"""Post-hoc metrics: area under the reward curve, stories, option occupancy, paired tests."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from opsr.harness.learners import PRIMITIVE


def aurc(returns: Sequence[float]) -> float:
    """Sum of per-episode returns."""
    r = np.asarray(returns, dtype=float)
    if r.size == 0:
        raise ValueError("empty learning curve")
    return float(r.sum())


def aurc_trapezoid(returns: Sequence[float]) -> float:
    """Trapezoid area over episode indices 0..n-1 (a single episode has area equal to its return)."""
    r = np.asarray(returns, dtype=float)
    if r.size == 0:
        raise ValueError("empty learning curve")
    if r.size == 1:
        return float(r[0])
    return float(np.trapezoid(r))


def _branch(mdp, s: int, a: int, s2: int) -> int:
    hits = np.flatnonzero((mdp.next_states[s, a] == s2) & (mdp.probs[s, a] > 0))
    if hits.size == 0:
        raise ValueError(f"transition ({s}, {a}) -> {s2} has zero probability")
    return int(hits[0])


def extract_story(states: Sequence[int], actions: Sequence[int], om, mdp) -> tuple:
    """Ordered labels of the outcome components that increase along a trace.

    Only the model's feature components are read (a constant per-step
    component would otherwise label every step).  A transition whose only
    nonzero components are decreases contributes ``-label`` entries.
    """
    comps = om.feature_components if om.feature_components is not None else tuple(range(om.dim))
    story = []
    for t, a in enumerate(actions):
        s, s2 = int(states[t]), int(states[t + 1])
        o = om.sigma[s, int(a), _branch(mdp, s, int(a), s2)]
        gains = [om.labels[i] for i in comps if o[i] > 0]
        if gains:
            story.extend(gains)
        else:
            story.extend("-" + om.labels[i] for i in comps if o[i] < 0)
    return tuple(story)


def dominant_story(stories: Sequence[tuple]):
    """Most frequent story; ties go to the one seen first."""
    if not stories:
        return None
    counts = Counter(stories)
    best = max(counts.values())
    return next(s for s in stories if counts[s] == best)


def controller_name(c: int) -> str:
    return "primitive" if c == PRIMITIVE else f"option_{c}"


@dataclass(frozen=True)
class OccupancyRecord:
    controllers: tuple  # names, column order
    counts: np.ndarray  # (T, n_controllers)
    alive: np.ndarray  # (T,)

    def rows(self) -> list:
        out = []
        for t in range(len(self.alive)):
            for j, name in enumerate(self.controllers):
                out.append((t, name, int(self.counts[t, j]), int(self.alive[t])))
        return out


def occupancy_graph(controller_traces: Sequence[Sequence[int]], n_options: int | None = None) -> OccupancyRecord:
    """Per-timestep histogram of the active controller over a set of traces."""
    seen = sorted({c for tr in controller_traces for c in tr if c != PRIMITIVE})
    k = max(seen, default=-1) + 1 if n_options is None else n_options
    ids = list(range(k)) + [PRIMITIVE]
    col = {c: j for j, c in enumerate(ids)}
    T = max((len(tr) for tr in controller_traces), default=0)
    counts = np.zeros((T, len(ids)), dtype=np.int64)
    alive = np.zeros(T, dtype=np.int64)
    for tr in controller_traces:
        for t, c in enumerate(tr):
            counts[t, col[c]] += 1
            alive[t] += 1
    return OccupancyRecord(tuple(controller_name(c) for c in ids), counts, alive)


@dataclass(frozen=True)
class PairedTest:
    mean_treatment: float
    mean_baseline: float
    statistic: float
    p_value: float
    n: int


def paired_greater(treatment: Sequence[float], baseline: Sequence[float]) -> PairedTest:
    """One-sided paired t-test of ``treatment > baseline``."""
    x, y = np.asarray(treatment, float), np.asarray(baseline, float)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need at least two matched pairs")
    d = x - y
    if np.all(d == d[0]):
        # zero variance: the t statistic is undefined
        p = 0.0 if d[0] > 0 else 1.0
        stat = np.inf if d[0] > 0 else (-np.inf if d[0] < 0 else 0.0)
    else:
        res = stats.ttest_rel(x, y, alternative="greater")
        stat, p = float(res.statistic), float(res.pvalue)
    return PairedTest(float(x.mean()), float(y.mean()), float(stat), float(p), int(x.size))
