import numpy as np
import pytest

from opsr.mdp import TabularMdp


def chain(n=3, discount=0.9, final_reward=1.0):
    """``0 -> 1 -> ... -> n-1`` with one action; the last move pays ``final_reward``; state n-1 terminal."""
    succ = np.array([[min(s + 1, n - 1)] for s in range(n)])
    rew = np.zeros((n, 1))
    rew[n - 2, 0] = final_reward
    term = np.zeros(n, bool)
    term[-1] = True
    return TabularMdp.deterministic(succ, rew, discount, term, 0, "chain")


def random_mdp(rng, n=4, A=2, discount=0.9, sparse=False):
    P = rng.dirichlet(np.ones(n), size=(n, A))
    if sparse:
        P = np.where(P < 0.15, 0.0, P)
        P[P.sum(axis=2) == 0, 0] = 1.0
        P /= P.sum(axis=2, keepdims=True)
    R = rng.normal(size=(n, A, n))
    return TabularMdp.from_dense(P, R, discount, np.zeros(n, bool), 0, "random")


def random_deterministic(rng, n=5, A=2, discount=0.9):
    succ = rng.integers(0, n, size=(n, A))
    rew = rng.normal(size=(n, A))
    return TabularMdp.deterministic(succ, rew, discount, np.zeros(n, bool), 0, "rdet")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_inference_instance(rng, max_paths=4096):
    """Random option-set parameters and a random trace with (K+1)**T <= max_paths."""
    from opsr.discovery import Trajectory, make_option_set

    K = int(rng.integers(1, 4))
    A = int(rng.integers(2, 4))
    F = int(rng.integers(1, 4))
    S = int(rng.integers(2, 6))
    T_max = int(np.floor(np.log(max_paths) / np.log(K + 1) + 1e-9))
    T = int(rng.integers(1, min(T_max, 8) + 1))
    feats = {"t": rng.normal(size=(S, F))}
    model = make_option_set(feats, K, A, rng)
    for k in model.params:
        model.params[k] = rng.normal(scale=1.0, size=model.params[k].shape)
    tau = Trajectory("t", rng.integers(0, S, size=T + 1), rng.integers(0, A, size=T))
    return model, tau


def brute_force_likelihood(model, tau):
    """Trace likelihood, posteriors u and v by summing over every controller path.

    Written directly from the parameter arrays so it shares no code with the
    library's inference routines.
    """
    import itertools

    p = model.params
    K, A, _ = p["W_pi"].shape
    null = K
    f = model.task_features[tau.task_id]

    def sm(z):
        e = np.exp(z - z.max())
        return e / e.sum()

    def emit(w, s, a):
        if w == null:
            return sm(p[f"bot/{tau.task_id}"][s])[a]
        return sm(p["W_pi"][w] @ f[s] + p["b_pi"][w])[a]

    def stop(w, s):
        if w == null:
            return 1.0
        return sm(p["W_beta"][w] @ f[s] + p["b_beta"][w])[1]

    T = len(tau.actions)
    u = np.zeros((T, K + 1))
    v = np.zeros((T, K + 1, K + 1))
    z = 0.0
    for path in itertools.product(range(K + 1), repeat=T):
        prob, prev = 1.0, null
        for t, w in enumerate(path):
            s, a = tau.states[t], tau.actions[t]
            h = sm(p[f"H/{tau.task_id}"][s])[w]
            b = stop(prev, s)
            prob *= ((1 - b) * (prev == w) + b * h) * emit(w, s, a)
            prev = w
        z += prob
        prev = null
        for t, w in enumerate(path):
            u[t, w] += prob
            v[t, prev, w] += prob
            prev = w
    return z, u / z, v / z


ACCEPTANCE_LINES: list = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
