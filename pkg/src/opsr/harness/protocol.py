"""Option discovery and evaluation protocol.

1. generate ``n_train`` tasks, solve each exactly and record the greedy trace;
2. fit a shared option set to those traces;
3. on ``n_test`` fresh tasks train SARSA(lambda) agents with and without the
   options, ``repetitions`` times per task under matched seeds.

Seeds: task generator seeds are ``seed * 100003 + i`` for train task ``i``
and ``seed * 100003 + 50000 + j`` for test task ``j``.  The learner rng for
(test task ``j``, repetition ``r``) is ``default_rng([seed, j, r])`` and is
shared by both agents.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from opsr.discovery import DiscoveryConfig, DiscoveryResult, ExtendedOptionSet, Trajectory, discover_options
from opsr.domains import compile_task, craftworld_generate, lightworld_generate, render_task
from opsr.domains.grid import parse_task
from opsr.harness.analysis import aurc, dominant_story, extract_story, occupancy_graph
from opsr.harness.learners import LearnerConfig, sarsa_lambda_train
from opsr.mdp import greedy_trace, solve_optimal
from opsr.options import FeatureSpec, smdp_action_set
from opsr.opsr import pca_reduce

TEST_OFFSET = 50000
SEED_STRIDE = 100003


@dataclass(frozen=True)
class ProtocolConfig:
    domain: str = "craftworld"
    n_train: int = 10
    n_test: int = 5
    repetitions: int = 20
    seed: int = 0
    n_rooms: int = 2  # lightworld only
    discovery: DiscoveryConfig = field(default_factory=DiscoveryConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolConfig":
        top = {k: d[k] for k in ("domain", "n_train", "n_test", "repetitions", "seed", "n_rooms") if k in d}
        return cls(**top, discovery=DiscoveryConfig.from_dict(d.get("discovery", {})),
                   learner=LearnerConfig.from_dict(d.get("learner", {})))

    def to_dict(self) -> dict:
        return asdict(self)


DESK_SCALE_CRAFTWORLD = ProtocolConfig()


def generate_task(cfg: ProtocolConfig, gen_seed: int):
    if cfg.domain == "craftworld":
        return craftworld_generate(gen_seed)
    if cfg.domain == "lightworld":
        return lightworld_generate(gen_seed, cfg.n_rooms)
    raise ValueError(f"protocol supports craftworld and lightworld, not {cfg.domain!r}")


def task_sets(cfg: ProtocolConfig):
    """``(train, test)`` lists of ``(task_id, spec)``."""
    base = cfg.seed * SEED_STRIDE
    train = [(f"train{i:03d}", generate_task(cfg, base + i)) for i in range(cfg.n_train)]
    test = [(f"test{j:03d}", generate_task(cfg, base + TEST_OFFSET + j)) for j in range(cfg.n_test)]
    return train, test


def demonstration_traces(tasks) -> list:
    """One optimal greedy trace per task from its start state."""
    out = []
    for tid, spec in tasks:
        mdp, _ = compile_task(spec)
        policy, _ = solve_optimal(mdp)
        states, actions, rewards = greedy_trace(mdp, policy)
        out.append(Trajectory(tid, states, actions, rewards))
    return out


def fit_feature_spec(tasks, dcfg: DiscoveryConfig) -> FeatureSpec:
    """Outcome-sequence features over the item components, PCA-reduced across all train states."""
    raw = []
    spec = None
    for _, s in tasks:
        mdp, om = compile_task(s)
        spec = FeatureSpec(dcfg.variant, dcfg.k, om.feature_components)
        raw.append(spec.raw_features(mdp, om))
    if spec is None:
        return FeatureSpec(dcfg.variant, dcfg.k)
    pca = pca_reduce(np.vstack(raw), dcfg.pca_variance)
    return spec.with_pca(pca.mean, pca.components)


def task_features(tasks, spec: FeatureSpec) -> dict:
    out = {}
    for tid, s in tasks:
        mdp, om = compile_task(s)
        out[tid] = spec.features(mdp, om)
    return out


def run_discovery(cfg: ProtocolConfig, train=None) -> DiscoveryResult:
    if train is None:
        train, _ = task_sets(cfg)
    traces = demonstration_traces(train)
    spec = fit_feature_spec(train, cfg.discovery)
    feats = task_features(train, spec)
    n_actions = compile_task(train[0][1])[0].n_actions
    return discover_options(traces, feats, spec, cfg.discovery.K, cfg.discovery, n_actions=n_actions)


@dataclass
class ExperimentReport:
    config: dict
    tasks: dict  # task_id -> rendered task text
    curves: list  # (task_id, seed, agent, episode, return, steps)
    aurc: list  # (task_id, seed, agent, aurc, aurc_normalized)
    stories: dict  # task_id -> list of story lists, one per repetition (option agent)
    occupancy: list  # (timestep, controller, count, alive)
    discovery: dict = field(default_factory=dict)
    partial: bool = False

    def to_dict(self) -> dict:
        return {
            "config": self.config, "tasks": self.tasks, "discovery": self.discovery, "partial": self.partial,
            "curves": [list(r) for r in self.curves], "aurc": [list(r) for r in self.aurc],
            "stories": {k: [list(s) for s in v] for k, v in self.stories.items()},
            "occupancy": [list(r) for r in self.occupancy],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(d["config"], d["tasks"], [tuple(r) for r in d["curves"]], [tuple(r) for r in d["aurc"]],
                   {k: [list(s) for s in v] for k, v in d["stories"].items()}, [tuple(r) for r in d["occupancy"]],
                   d.get("discovery", {}), bool(d.get("partial", False)))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def loads(cls, text: str) -> "ExperimentReport":
        return cls.from_dict(json.loads(text))

    def aurc_pairs(self):
        """Matched ``(option, baseline)`` AURC arrays ordered by (task, seed)."""
        by = {(t, s, a): v for t, s, a, v, _ in self.aurc}
        keys = sorted({(t, s) for t, s, _ in by})
        opt = np.array([by[(t, s, "options")] for t, s in keys])
        base = np.array([by[(t, s, "primitive")] for t, s in keys])
        return opt, base


AGENTS = ("primitive", "options")


def evaluate(cfg: ProtocolConfig, option_set: ExtendedOptionSet | None, test=None, discovery_info: dict | None = None,
             progress=None) -> ExperimentReport:
    """Train matched option-less and option-enabled learners on the test tasks."""
    if test is None:
        _, test = task_sets(cfg)
    options = option_set.options() if option_set is not None else []
    spec = option_set.feature_spec if option_set is not None else None
    curves, aurcs, stories, ctrl_traces = [], [], {}, []
    for j, (tid, task) in enumerate(test):
        mdp, om = compile_task(task)
        feats = spec.features(mdp, om) if options else None
        aset = smdp_action_set(mdp.n_actions, options)
        task_aurc = {a: [] for a in AGENTS}
        stories[tid] = []
        for r in range(cfg.repetitions):
            for agent in AGENTS:
                rng = np.random.default_rng([cfg.seed, j, r])
                if agent == "options":
                    curve, _, trace = sarsa_lambda_train(mdp, cfg.learner, rng, aset, feats)
                else:
                    curve, _, trace = sarsa_lambda_train(mdp, cfg.learner, rng)
                for ep, (ret, steps) in enumerate(zip(curve.returns, curve.steps)):
                    curves.append((tid, r, agent, ep, float(ret), int(steps)))
                task_aurc[agent].append(aurc(curve.returns) if len(curve) else 0.0)
                if agent == "options":
                    story = extract_story(trace.states, trace.actions, om, mdp)
                    stories[tid].append(list(story))
                    ctrl_traces.append((story, trace.controllers))
            if progress:
                progress(tid, r)
        base = float(np.mean(task_aurc["primitive"])) if task_aurc["primitive"] else 0.0
        scale = abs(base) if base != 0 else 1.0
        for agent in AGENTS:
            for r, v in enumerate(task_aurc[agent]):
                aurcs.append((tid, r, agent, float(v), float(v / scale)))
    dom = dominant_story([s for s, _ in ctrl_traces])
    occ = occupancy_graph([c for s, c in ctrl_traces if s == dom], n_options=len(options))
    return ExperimentReport(cfg.to_dict(), {tid: render_task(t) for tid, t in test}, curves, aurcs, stories,
                            occ.rows(), discovery_info or {})


def discovery_summary(res: DiscoveryResult) -> dict:
    return {"converged": bool(res.converged), "reason": res.reason, "epochs": len(res.log),
            "best_log_likelihood": float(res.best_log_likelihood)}


def run_protocol(cfg: ProtocolConfig = DESK_SCALE_CRAFTWORLD, progress=None) -> ExperimentReport:
    train, test = task_sets(cfg)
    res = run_discovery(cfg, train)
    return evaluate(cfg, res.option_set, test, discovery_summary(res), progress)


def specs_from_report(report: ExperimentReport) -> list:
    return [(tid, parse_task(text)) for tid, text in sorted(report.tasks.items())]
