"""Options over feature spaces and their semi-MDP execution.

An option is a linear-softmax control policy plus a two-logit softmax
termination policy, both reading a per-state feature vector.  Features come
from a :class:`FeatureSpec`: an OPSR layout (optionally restricted to some
outcome components) followed by an optional PCA projection.  The same spec
evaluated on a different task gives features for that task, which is what
lets options move between tasks.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from opsr.mdp import TabularMdp
from opsr.outcomes import OutcomeModel

CONTINUE, TERMINATE = 0, 1


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _floats(a) -> list:
    return [repr(float(x)) for x in np.asarray(a).ravel()]


def _array(values, shape) -> np.ndarray:
    return np.array([float(x) for x in values], dtype=float).reshape(shape)


@dataclass(frozen=True, eq=False)
class FeatureSpec:
    """How to turn a task state into an option feature vector."""

    variant: str = "terminal_up_to"
    k: int = 2
    components: tuple | None = None  # outcome components used; None = model default
    pca_mean: np.ndarray | None = None
    pca_components: np.ndarray | None = None  # (m, D)

    @property
    def projected(self) -> bool:
        return self.pca_components is not None

    def raw_features(self, mdp: TabularMdp, om: OutcomeModel, states: Sequence[int] | None = None) -> np.ndarray:
        from opsr.opsr import opsr_matrix

        model = om.select(self.components) if self.components is not None else om.feature_model()
        return opsr_matrix(mdp, model, self.k, self.variant, states)

    def features(self, mdp: TabularMdp, om: OutcomeModel, states: Sequence[int] | None = None) -> np.ndarray:
        raw = self.raw_features(mdp, om, states)
        if not self.projected:
            return raw
        return (raw - self.pca_mean) @ self.pca_components.T

    def with_pca(self, mean: np.ndarray, components: np.ndarray) -> "FeatureSpec":
        return FeatureSpec(self.variant, self.k, self.components, np.asarray(mean, float), np.asarray(components, float))

    def to_dict(self) -> dict:
        d = {"variant": self.variant, "k": self.k, "components": None if self.components is None else list(self.components)}
        if self.projected:
            d["pca_mean"] = _floats(self.pca_mean)
            d["pca_components"] = _floats(self.pca_components)
            d["pca_shape"] = list(self.pca_components.shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        comps = None if d.get("components") is None else tuple(d["components"])
        if "pca_components" in d:
            shape = tuple(d["pca_shape"])
            return cls(d["variant"], int(d["k"]), comps, _array(d["pca_mean"], (shape[1],)), _array(d["pca_components"], shape))
        return cls(d["variant"], int(d["k"]), comps)


@dataclass(frozen=True, eq=False)
class OptionDef:
    control_weights: np.ndarray  # (A, F)
    control_bias: np.ndarray  # (A,)
    termination_weights: np.ndarray  # (2, F); row 1 is the terminate logit
    termination_bias: np.ndarray  # (2,)
    feature_spec: FeatureSpec = field(default_factory=FeatureSpec)
    name: str = ""

    def __post_init__(self):
        W = np.array(self.control_weights, dtype=float)
        b = np.array(self.control_bias, dtype=float).reshape(-1)
        Wb = np.array(self.termination_weights, dtype=float)
        bb = np.array(self.termination_bias, dtype=float).reshape(-1)
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise ValueError("control weights must be (A, F) with bias (A,)")
        if Wb.shape != (2, W.shape[1]) or bb.shape != (2,):
            raise ValueError("termination weights must be (2, F) with bias (2,)")
        for name, arr in (("control_weights", W), ("control_bias", b), ("termination_weights", Wb), ("termination_bias", bb)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_actions(self) -> int:
        return self.control_weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.control_weights.shape[1]

    @classmethod
    def zeros(cls, n_actions: int, n_features: int, feature_spec: FeatureSpec | None = None, name: str = "") -> "OptionDef":
        return cls(np.zeros((n_actions, n_features)), np.zeros(n_actions), np.zeros((2, n_features)), np.zeros(2),
                   feature_spec or FeatureSpec(), name)

    def _check(self, features: np.ndarray) -> np.ndarray:
        f = np.asarray(features, dtype=float)
        if f.shape[-1] != self.n_features:
            raise ValueError(f"feature dimension {f.shape[-1]} does not match option ({self.n_features})")
        return f

    def action_dist(self, features: np.ndarray) -> np.ndarray:
        f = self._check(features)
        return softmax(f @ self.control_weights.T + self.control_bias)

    def termination_prob(self, features: np.ndarray):
        f = self._check(features)
        return softmax(f @ self.termination_weights.T + self.termination_bias)[..., TERMINATE]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "feature_spec": self.feature_spec.to_dict(),
            "shape": [self.n_actions, self.n_features],
            "W_pi": _floats(self.control_weights),
            "b_pi": _floats(self.control_bias),
            "W_beta": _floats(self.termination_weights),
            "b_beta": _floats(self.termination_bias),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OptionDef":
        A, F = d["shape"]
        return cls(
            _array(d["W_pi"], (A, F)),
            _array(d["b_pi"], (A,)),
            _array(d["W_beta"], (2, F)),
            _array(d["b_beta"], (2,)),
            FeatureSpec.from_dict(d["feature_spec"]),
            d.get("name", ""),
        )


def option_action_dist(opt: OptionDef, features: np.ndarray) -> np.ndarray:
    return opt.action_dist(features)


def option_termination_prob(opt: OptionDef, features: np.ndarray) -> float:
    return float(opt.termination_prob(features))


def dumps_options(options: Sequence[OptionDef]) -> str:
    return json.dumps({"options": [o.to_dict() for o in options]}, indent=1, sort_keys=True)


def loads_options(text: str) -> list[OptionDef]:
    return [OptionDef.from_dict(d) for d in json.loads(text)["options"]]


@dataclass(frozen=True, eq=False)
class OptionTables:
    """An option's action and termination probabilities tabulated over one task's states."""

    action_probs: np.ndarray  # (S, A)
    action_cdf: np.ndarray  # (S, A)
    termination: np.ndarray  # (S,)

    @classmethod
    def build(cls, opt: OptionDef, features: np.ndarray) -> "OptionTables":
        p = opt.action_dist(features)
        return cls(p, np.cumsum(p, axis=1), np.asarray(opt.termination_prob(features), dtype=float))


@dataclass(frozen=True)
class OptionResult:
    end_state: int
    steps: int
    reward: float  # discounted with gamma**i inside the option
    trace: tuple  # ((s, a, r), ...)


def _sample_cdf(cdf: np.ndarray, u: float) -> int:
    return min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), len(cdf) - 1)


def execute_option(
    mdp: TabularMdp,
    features_or_tables,
    opt: OptionDef | None,
    s: int,
    rng: np.random.Generator,
    max_steps: int = 100,
    gamma: float | None = None,
) -> OptionResult:
    """Run an option from ``s`` until it terminates.

    The first action is always taken; before every later action termination
    is sampled in the current state.  Execution also stops on reaching a
    terminal state or after ``max_steps`` actions.  ``features_or_tables`` is
    either the task's ``(S, F)`` feature matrix or prebuilt
    :class:`OptionTables` (then ``opt`` may be ``None``).
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    tables = features_or_tables if isinstance(features_or_tables, OptionTables) else OptionTables.build(opt, features_or_tables)
    g = mdp.discount if gamma is None else gamma
    trace = []
    total, disc = 0.0, 1.0
    deterministic = mdp.n_branches == 1
    for i in range(max_steps):
        if mdp.terminal[s]:
            break
        if i > 0 and rng.random() < tables.termination[s]:
            break
        a = _sample_cdf(tables.action_cdf[s], rng.random())
        if deterministic:
            s2, r = int(mdp.next_states[s, a, 0]), float(mdp.rewards[s, a, 0])
        else:
            s2, r = mdp.step(s, a, rng)
        trace.append((s, a, r))
        total += disc * r
        disc *= g
        s = s2
    return OptionResult(int(s), len(trace), total, tuple(trace))


@dataclass(frozen=True)
class SmdpActionSet:
    """High-level actions: primitives ``0..n-1`` then one entry per option."""

    n_primitive: int
    options: tuple = ()

    @property
    def size(self) -> int:
        return self.n_primitive + len(self.options)

    def is_option(self, action: int) -> bool:
        return action >= self.n_primitive

    def option(self, action: int) -> OptionDef:
        return self.options[action - self.n_primitive]


def smdp_action_set(primitive_count: int, options: Sequence[OptionDef] = ()) -> SmdpActionSet:
    return SmdpActionSet(int(primitive_count), tuple(options))
