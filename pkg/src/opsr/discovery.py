"""Option discovery by maximum likelihood over demonstration traces.

Generative model: at every step the previously active controller may stop
(the null controller ``⊥`` always stops); after a stop a per-task high-level
policy picks the next controller among ``K`` shared options and ``⊥``; the
active controller then emits the action.  ``⊥`` emits through a per-task
primitive policy.  Controllers are indexed ``0..K-1`` for options and ``K``
for ``⊥``.

Parameters live in a flat dict of arrays:

``W_pi`` (K, A, F), ``b_pi`` (K, A)
    option control logits from option features.
``W_beta`` (K, 2, F), ``b_beta`` (K, 2)
    option termination logits; index 1 is "terminate".
``H/<task>`` (S_task, K+1), ``bot/<task>`` (S_task, A)
    per-task high-level and primitive logits over one-hot state features.

Inference is a scaled forward-backward pass; environment transition
probabilities are left out of the likelihood since they do not depend on the
parameters.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from opsr.errors import DegenerateLikelihoodError
from opsr.options import FeatureSpec, OptionDef, softmax

SHARED_KEYS = ("W_pi", "b_pi", "W_beta", "b_beta")


@dataclass(frozen=True)
class Trajectory:
    task_id: str
    states: tuple
    actions: tuple
    rewards: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        object.__setattr__(self, "rewards", tuple(float(r) for r in self.rewards))
        if len(self.states) != len(self.actions) + 1:
            raise ValueError(f"trajectory needs T+1 states for T actions, got {len(self.states)} and {len(self.actions)}")
        if self.rewards and len(self.rewards) != len(self.actions):
            raise ValueError("one reward per action required")

    @property
    def length(self) -> int:
        return len(self.actions)

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "states": list(self.states), "actions": list(self.actions),
                "rewards": [repr(r) for r in self.rewards]}

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(str(d["task_id"]), d["states"], d["actions"], [float(r) for r in d.get("rewards", [])])


def dumps_traces(traces: Sequence[Trajectory]) -> str:
    return "".join(json.dumps(t.to_dict(), sort_keys=True) + "\n" for t in traces)


def loads_traces(text: str) -> list[Trajectory]:
    return [Trajectory.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


@dataclass(eq=False)
class ExtendedOptionSet:
    """``K`` shared options plus the null controller, with per-task policies."""

    params: dict
    task_features: dict  # task_id -> (S_task, F) option features
    feature_spec: FeatureSpec = field(default_factory=FeatureSpec)

    @property
    def K(self) -> int:
        return self.params["W_pi"].shape[0]

    @property
    def n_actions(self) -> int:
        return self.params["W_pi"].shape[1]

    @property
    def n_features(self) -> int:
        return self.params["W_pi"].shape[2]

    @property
    def null(self) -> int:
        return self.K

    @property
    def task_ids(self) -> list:
        return sorted(self.task_features)

    def copy(self) -> "ExtendedOptionSet":
        return ExtendedOptionSet({k: v.copy() for k, v in self.params.items()}, self.task_features, self.feature_spec)

    def with_params(self, params: dict) -> "ExtendedOptionSet":
        return ExtendedOptionSet(params, self.task_features, self.feature_spec)

    def options(self) -> list[OptionDef]:
        p = self.params
        return [OptionDef(p["W_pi"][i], p["b_pi"][i], p["W_beta"][i], p["b_beta"][i], self.feature_spec, f"option{i}")
                for i in range(self.K)]

    # -- per-state quantities ----------------------------------------------
    def high_level(self, task_id: str, states) -> np.ndarray:
        return softmax(self.params[f"H/{task_id}"][np.asarray(states)])

    def primitive(self, task_id: str, states) -> np.ndarray:
        return softmax(self.params[f"bot/{task_id}"][np.asarray(states)])

    def option_actions(self, task_id: str, states) -> np.ndarray:
        """``(n, K, A)`` option action distributions."""
        f = self.task_features[task_id][np.asarray(states)]
        return softmax(np.einsum("kaf,nf->nka", self.params["W_pi"], f) + self.params["b_pi"][None])

    def terminations(self, task_id: str, states) -> np.ndarray:
        """``(n, K+1)`` stop probabilities; the null controller always stops."""
        f = self.task_features[task_id][np.asarray(states)]
        logits = np.einsum("kcf,nf->nkc", self.params["W_beta"], f) + self.params["b_beta"][None]
        beta = softmax(logits)[..., 1]
        return np.concatenate([beta, np.ones((beta.shape[0], 1))], axis=1)

    def to_dict(self) -> dict:
        return {
            "feature_spec": self.feature_spec.to_dict(),
            "params": {k: {"shape": list(v.shape), "values": [repr(float(x)) for x in v.ravel()]} for k, v in sorted(self.params.items())},
            "task_features": {t: {"shape": list(v.shape), "values": [repr(float(x)) for x in v.ravel()]} for t, v in sorted(self.task_features.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExtendedOptionSet":
        def arr(e):
            return np.array([float(x) for x in e["values"]], dtype=float).reshape(e["shape"])

        return cls({k: arr(v) for k, v in d["params"].items()}, {t: arr(v) for t, v in d["task_features"].items()},
                   FeatureSpec.from_dict(d["feature_spec"]))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "ExtendedOptionSet":
        return cls.from_dict(json.loads(text))


def init_params(task_sizes: Mapping[str, int], K: int, n_actions: int, n_features: int, rng: np.random.Generator) -> dict:
    """Uniform(-0.1, 0.1) initial parameters; tasks are initialised in sorted order."""
    u = lambda *shape: rng.uniform(-0.1, 0.1, size=shape)
    params = {
        "W_pi": u(K, n_actions, n_features),
        "b_pi": u(K, n_actions),
        "W_beta": u(K, 2, n_features),
        "b_beta": u(K, 2),
    }
    for t in sorted(task_sizes):
        params[f"H/{t}"] = u(task_sizes[t], K + 1)
        params[f"bot/{t}"] = u(task_sizes[t], n_actions)
    return params


def make_option_set(task_features: Mapping[str, np.ndarray], K: int, n_actions: int, rng, feature_spec: FeatureSpec | None = None) -> ExtendedOptionSet:
    feats = {t: np.asarray(f, dtype=float) for t, f in task_features.items()}
    F = next(iter(feats.values())).shape[1] if feats else 0
    params = init_params({t: f.shape[0] for t, f in feats.items()}, K, n_actions, F, rng)
    return ExtendedOptionSet(params, feats, feature_spec or FeatureSpec())


# -- model quantities along a trace ---------------------------------------------

@dataclass(frozen=True)
class _TraceTerms:
    pi_h: np.ndarray  # (T, K+1)
    beta: np.ndarray  # (T, K+1) stop prob of the controller active before step t
    emis: np.ndarray  # (T, K+1) probability of the observed action per controller
    opt_pi: np.ndarray  # (T, K, A)
    bot_pi: np.ndarray  # (T, A)


def _terms(params: ExtendedOptionSet, tau: Trajectory) -> _TraceTerms:
    s = np.asarray(tau.states[:-1])
    a = np.asarray(tau.actions)
    T = len(a)
    opt_pi = params.option_actions(tau.task_id, s)
    bot_pi = params.primitive(tau.task_id, s)
    emis = np.concatenate([opt_pi[np.arange(T), :, a], bot_pi[np.arange(T), a][:, None]], axis=1)
    return _TraceTerms(params.high_level(tau.task_id, s), params.terminations(tau.task_id, s), emis, opt_pi, bot_pi)


def _transition_matrix(pi_h: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """``M[w, w']`` for one step: keep the controller with prob ``1 - beta[w]``, else redraw."""
    M = beta[:, None] * pi_h[None, :]
    M[np.diag_indices_from(M)] += 1.0 - beta
    return M


def option_transition_prob(params: ExtendedOptionSet, task_id: str, prev: int, nxt: int, s: int) -> float:
    """Probability of controller ``nxt`` at state ``s`` given ``prev`` was active."""
    pi_h = params.high_level(task_id, [s])[0]
    if prev == params.null:
        return float(pi_h[nxt])
    beta = params.terminations(task_id, [s])[0, prev]
    return float((1.0 - beta) * (prev == nxt) + beta * pi_h[nxt])


@dataclass(frozen=True)
class Posteriors:
    u: np.ndarray  # (T, K+1)
    v: np.ndarray  # (T, K+1, K+1): v[t, prev, cur]; step 0 has prev = null
    log_z: float


def forward_backward(params: ExtendedOptionSet, tau: Trajectory, terms: _TraceTerms | None = None) -> Posteriors:
    """Scaled forward-backward over latent controllers."""
    tm = _terms(params, tau) if terms is None else terms
    T, n = tm.emis.shape
    if T == 0:
        return Posteriors(np.zeros((0, n)), np.zeros((0, n, n)), 0.0)
    alpha = np.zeros((T, n))
    c = np.zeros(T)
    Ms = [None] * T
    a0 = tm.pi_h[0] * tm.emis[0]
    c[0] = a0.sum()
    if not c[0] > 0:
        raise DegenerateLikelihoodError(f"trace of task {tau.task_id} has zero probability at step 0")
    alpha[0] = a0 / c[0]
    for t in range(1, T):
        Ms[t] = _transition_matrix(tm.pi_h[t], tm.beta[t])
        at = (alpha[t - 1] @ Ms[t]) * tm.emis[t]
        c[t] = at.sum()
        if not c[t] > 0:
            raise DegenerateLikelihoodError(f"trace of task {tau.task_id} has zero probability at step {t}")
        alpha[t] = at / c[t]
    bwd = np.ones((T, n))
    for t in range(T - 2, -1, -1):
        bwd[t] = Ms[t + 1] @ (tm.emis[t + 1] * bwd[t + 1]) / c[t + 1]
    u = alpha * bwd
    v = np.zeros((T, n, n))
    v[0, n - 1] = u[0]
    for t in range(1, T):
        v[t] = alpha[t - 1][:, None] * Ms[t] * (tm.emis[t] * bwd[t])[None, :] / c[t]
    return Posteriors(u, v, float(np.log(c).sum()))


def log_likelihood(params: ExtendedOptionSet, traces: Sequence[Trajectory]) -> float:
    return float(sum(forward_backward(params, tau).log_z for tau in traces))


def _softmax_grad(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Chain rule through softmax: d/dz of sum_j g_j p_j  ->  p * (g - <p, g>)."""
    return p * (g - np.sum(p * g, axis=-1, keepdims=True))


def gradient(params: ExtendedOptionSet, tau: Trajectory, post: Posteriors | None = None, terms: _TraceTerms | None = None) -> dict:
    """Gradient of the trace log-likelihood with respect to every parameter touched by the trace."""
    tm = _terms(params, tau) if terms is None else terms
    if post is None:
        post = forward_backward(params, tau, tm)
    T, n = tm.emis.shape
    K, A = n - 1, params.n_actions
    s = np.asarray(tau.states[:-1])
    a = np.asarray(tau.actions)
    f = params.task_features[tau.task_id][s]  # (T, F)

    # transition part: c = v / M, split into the stop and redraw factors
    g_beta = np.zeros((T, n))
    g_h = np.zeros((T, n))
    g_h[0] = np.divide(post.v[0, K], tm.pi_h[0], out=np.zeros(n), where=tm.pi_h[0] > 0)
    for t in range(1, T):
        M = _transition_matrix(tm.pi_h[t], tm.beta[t])
        cm = np.divide(post.v[t], M, out=np.zeros_like(M), where=M > 0)
        g_beta[t] = np.sum(cm * (tm.pi_h[t][None, :] - np.eye(n)), axis=1)
        g_h[t] = tm.beta[t] @ cm
    dz_h = _softmax_grad(tm.pi_h, g_h)  # (T, K+1)

    # option stop logits: d beta / d z_stop = beta (1 - beta), opposite sign on z_continue
    bb = tm.beta[:, :K]
    d_stop = g_beta[:, :K] * bb * (1.0 - bb)  # (T, K)
    dz_beta = np.stack([-d_stop, d_stop], axis=2)  # (T, K, 2)

    # emission part: u * (onehot(a) - pi)
    onehot = np.zeros((T, A))
    onehot[np.arange(T), a] = 1.0
    dz_pi = post.u[:, :K, None] * (onehot[:, None, :] - tm.opt_pi)  # (T, K, A)
    dz_bot = post.u[:, K, None] * (onehot - tm.bot_pi)  # (T, A)

    S_task = params.params[f"H/{tau.task_id}"].shape[0]
    gH = np.zeros((S_task, n))
    np.add.at(gH, s, dz_h)
    gB = np.zeros((S_task, A))
    np.add.at(gB, s, dz_bot)
    return {
        "W_pi": np.einsum("tka,tf->kaf", dz_pi, f),
        "b_pi": dz_pi.sum(axis=0),
        "W_beta": np.einsum("tkc,tf->kcf", dz_beta, f),
        "b_beta": dz_beta.sum(axis=0),
        f"H/{tau.task_id}": gH,
        f"bot/{tau.task_id}": gB,
    }


def enumerate_posteriors(params: ExtendedOptionSet, tau: Trajectory, cap: int = 1 << 16) -> Posteriors:
    """Posteriors by summing over every latent controller path (reference for tests)."""
    import itertools

    tm = _terms(params, tau)
    T, n = tm.emis.shape
    if n**T > cap:
        raise ValueError(f"{n}**{T} latent paths exceeds cap {cap}")
    u = np.zeros((T, n))
    v = np.zeros((T, n, n))
    z = 0.0
    null = n - 1
    for path in itertools.product(range(n), repeat=T):
        p = 1.0
        prev = null
        for t, w in enumerate(path):
            trans = tm.pi_h[t][w] if prev == null else (1 - tm.beta[t][prev]) * (prev == w) + tm.beta[t][prev] * tm.pi_h[t][w]
            p *= trans * tm.emis[t][w]
            prev = w
        z += p
        prev = null
        for t, w in enumerate(path):
            u[t, w] += p
            v[t, prev, w] += p
            prev = w
    if z <= 0:
        raise DegenerateLikelihoodError("zero-probability trace")
    return Posteriors(u / z, v / z, math.log(z))


# -- optimisation -----------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float = 0.3, betas=(0.9, 0.999), eps: float = 1e-8):
    """One Adam ascent step on the keys present in ``grads`` (in place); returns (params, state)."""
    b1, b2 = betas
    for key in sorted(grads):
        g = np.asarray(grads[key], dtype=float)
        if params[key].shape != g.shape:
            raise ValueError(f"gradient for {key} has shape {g.shape}, parameter has {params[key].shape}")
        m = state.m.get(key)
        if m is None:
            m = np.zeros_like(g)
            state.v[key] = np.zeros_like(g)
            state.t[key] = 0
        state.t[key] += 1
        t = state.t[key]
        m = b1 * m + (1 - b1) * g
        v = b2 * state.v[key] + (1 - b2) * g * g
        state.m[key], state.v[key] = m, v
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        params[key] = params[key] + lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


@dataclass
class DiscoveryConfig:
    K: int = 3
    variant: str = "terminal_up_to"
    k: int = 2
    pca_variance: float = 0.99
    lr: float = 0.3
    likelihood_target: float = 0.99
    conv_tol: float = 1e-4
    patience: int = 50
    max_epochs: int = 300
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "DiscoveryConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        if "feature" in d:  # nested {"variant": .., "k": ..}
            known.setdefault("variant", d["feature"].get("variant", cls.variant))
            known.setdefault("k", d["feature"].get("k", cls.k))
        return cls(**known)


@dataclass
class DiscoveryResult:
    option_set: ExtendedOptionSet
    converged: bool
    reason: str
    log: list  # (epoch, log_likelihood, grad_norm)
    best_log_likelihood: float


def _grad_norm(total: dict) -> float:
    return float(math.sqrt(sum(float(np.sum(g * g)) for g in total.values())))


def _evaluate(params: ExtendedOptionSet, traces: Sequence[Trajectory]):
    ll = 0.0
    total: dict = {}
    for tau in traces:
        tm = _terms(params, tau)
        post = forward_backward(params, tau, tm)
        ll += post.log_z
        for k, g in gradient(params, tau, post, tm).items():
            total[k] = total[k] + g if k in total else g
    return ll, total


def discover_options(
    traces: Sequence[Trajectory],
    task_features: Mapping[str, np.ndarray],
    feature_spec: FeatureSpec | None = None,
    K: int | None = None,
    config: DiscoveryConfig | None = None,
    n_actions: int | None = None,
) -> DiscoveryResult:
    """Expectation-gradient training of ``K`` shared options with Adam ascent.

    Each epoch visits the traces in a seeded random order and takes one Adam
    step per trace.  Training stops when the per-step geometric mean of the
    trace likelihood reaches ``likelihood_target``, when the best
    log-likelihood has not improved by ``conv_tol`` for ``patience`` epochs, or
    after ``max_epochs``.  The best parameters seen are returned.
    """
    cfg = config or DiscoveryConfig()
    K = cfg.K if K is None else K
    missing = {t.task_id for t in traces} - set(task_features)
    if missing:
        raise ValueError(f"traces reference unknown tasks: {sorted(missing)}")
    if K < 0:
        raise ValueError("K must be >= 0")
    rng = np.random.default_rng(cfg.seed)
    if n_actions is None:
        n_actions = 1 + max((a for t in traces for a in t.actions), default=0)
    model = make_option_set(task_features, K, n_actions, rng, feature_spec)
    return train(model, traces, cfg, rng)


def train(model: ExtendedOptionSet, traces: Sequence[Trajectory], cfg: DiscoveryConfig, rng: np.random.Generator) -> DiscoveryResult:
    params = model.copy()
    state = AdamState()
    n_steps = sum(t.length for t in traces)
    ll, total = _evaluate(params, traces)
    best_ll, best = ll, params.copy()
    log = [(0, ll, _grad_norm(total))]
    since_best = 0
    reason, converged = "max_epochs", False
    if n_steps == 0:
        return DiscoveryResult(best, True, "empty", log, best_ll)
    for epoch in range(1, cfg.max_epochs + 1):
        if math.exp(best_ll / n_steps) >= cfg.likelihood_target:
            reason, converged = "likelihood_target", True
            break
        for i in rng.permutation(len(traces)):
            tau = traces[i]
            g = gradient(params, tau)
            adam_step(params.params, g, state, cfg.lr)
        ll, total = _evaluate(params, traces)
        log.append((epoch, ll, _grad_norm(total)))
        if ll > best_ll + cfg.conv_tol:
            since_best = 0
        else:
            since_best += 1
        if ll > best_ll:
            best_ll, best = ll, params.copy()
        if since_best >= cfg.patience:
            reason, converged = "patience", True
            break
    else:
        if math.exp(best_ll / n_steps) >= cfg.likelihood_target:
            reason, converged = "likelihood_target", True
    return DiscoveryResult(best, converged, reason, log, best_ll)


def generative_rollout(params: ExtendedOptionSet, task_id: str, mdp, T: int, rng: np.random.Generator, start: int | None = None):
    """Sample a trace and its latent controller sequence from the hierarchical model."""
    s = mdp.initial_state if start is None else start
    states, actions, rewards, latent = [int(s)], [], [], []
    active = params.null
    for _ in range(T):
        if mdp.terminal[s]:
            break
        stop = params.terminations(task_id, [s])[0, active]
        if rng.random() < stop:
            active = int(rng.choice(params.K + 1, p=params.high_level(task_id, [s])[0]))
        if active == params.null:
            p = params.primitive(task_id, [s])[0]
        else:
            p = params.option_actions(task_id, [s])[0, active]
        a = int(rng.choice(len(p), p=p))
        s2, r = mdp.step(s, a, rng)
        actions.append(a)
        rewards.append(r)
        latent.append(active)
        states.append(s2)
        s = s2
    return Trajectory(task_id, states, actions, rewards), latent


def training_log_csv(log: Sequence[tuple]) -> str:
    lines = ["epoch,log_likelihood,grad_norm"]
    lines += [f"{e},{ll!r},{g!r}" for e, ll, g in log]
    return "\n".join(lines) + "\n"
