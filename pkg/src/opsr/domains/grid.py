"""Plain-text grid task format and helpers shared by the grid domains.

Format::

    domain=<mini|craftworld|lightworld>
    meta key=value        (zero or more)
    <glyph rows>

Glyphs per domain:

==========  =====================================================
all         ``A`` agent start (on floor), ``.`` floor, ``#`` wall
mini        ``G`` goal, ``R`` red tile
craftworld  ``W`` wood, ``S`` stone, ``1`` handle bench,
            ``2`` head bench, ``3`` hammer bench
lightworld  ``K`` key, ``L`` lock, ``D`` door
==========  =====================================================
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable

import numpy as np

from opsr.errors import TaskParseError
from opsr.mdp import TabularMdp
from opsr.outcomes import OutcomeModel

COMMON_GLYPHS = frozenset("A.#")
DOMAIN_GLYPHS = {
    "mini": COMMON_GLYPHS | frozenset("GR"),
    "craftworld": COMMON_GLYPHS | frozenset("WS123"),
    "lightworld": COMMON_GLYPHS | frozenset("KLD"),
}
# up, down, left, right
MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))
MOVE_NAMES = ("up", "down", "left", "right")


@dataclass(frozen=True)
class GridTaskSpec:
    kind: str
    cells: tuple  # row strings, y from top
    start: tuple  # (x, y)
    meta: tuple = field(default=())  # ((key, value), ...) in file order

    @property
    def width(self) -> int:
        return len(self.cells[0])

    @property
    def height(self) -> int:
        return len(self.cells)

    @property
    def meta_dict(self) -> dict:
        return dict(self.meta)

    def glyph(self, x: int, y: int) -> str:
        """Glyph at a cell; the agent start reads as floor."""
        g = self.cells[y][x]
        return "." if g == "A" else g

    def inside(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def find(self, glyph: str) -> list:
        return [(x, y) for y, row in enumerate(self.cells) for x, g in enumerate(row) if g == glyph]


def parse_task(text: str) -> GridTaskSpec:
    lines = text.splitlines()
    i = 0
    while i < len(lines) and not lines[i].strip():
        i += 1
    if i == len(lines):
        raise TaskParseError("empty task text", 1)
    head = lines[i].strip()
    if not head.startswith("domain="):
        raise TaskParseError("first line must be 'domain=<kind>'", i + 1, 1)
    kind = head[len("domain="):].strip()
    if kind not in DOMAIN_GLYPHS:
        raise TaskParseError(f"unknown domain kind {kind!r}", i + 1, len("domain=") + 1)
    meta = []
    i += 1
    while i < len(lines) and lines[i].startswith("meta "):
        body = lines[i][5:].strip()
        if "=" not in body:
            raise TaskParseError("meta line must be 'meta key=value'", i + 1, 6)
        k, v = body.split("=", 1)
        meta.append((k.strip(), v.strip()))
        i += 1
    rows = []
    first_row_line = i + 1
    for j in range(i, len(lines)):
        row = lines[j].rstrip("\r")
        if not row.strip():
            # trailing blank lines are allowed, blank lines inside the grid are not
            if any(l.strip() for l in lines[j:]):
                raise TaskParseError("blank line inside grid", j + 1, 1)
            break
        rows.append((j + 1, row))
    if not rows:
        raise TaskParseError("task has no grid rows", first_row_line)
    width = len(rows[0][1])
    allowed = DOMAIN_GLYPHS[kind]
    agents = []
    for ln, row in rows:
        if len(row) != width:
            raise TaskParseError(f"ragged row: length {len(row)}, expected {width}", ln, min(len(row), width) + 1)
        for col, g in enumerate(row):
            if g not in allowed:
                raise TaskParseError(f"unknown glyph {g!r} for domain {kind}", ln, col + 1)
            if g == "A":
                agents.append((ln, col))
    if not agents:
        raise TaskParseError("no agent start 'A' in grid", rows[0][0])
    if len(agents) > 1:
        ln, col = agents[1]
        raise TaskParseError(f"multiple agent starts ({len(agents)})", ln, col + 1)
    ln, col = agents[0]
    start = (col, ln - rows[0][0])
    return GridTaskSpec(kind, tuple(r for _, r in rows), start, tuple(meta))


def render_task(spec: GridTaskSpec) -> str:
    out = [f"domain={spec.kind}"]
    out += [f"meta {k}={v}" for k, v in spec.meta]
    out += list(spec.cells)
    return "\n".join(out) + "\n"


def with_cells(kind: str, grid: list, meta: tuple = ()) -> GridTaskSpec:
    """Spec from a mutable list-of-lists grid containing exactly one ``A``."""
    cells = tuple("".join(r) for r in grid)
    return parse_task(render_task(GridTaskSpec(kind, cells, (0, 0), meta)))


def build_deterministic_task(
    initial: Hashable,
    step: Callable,
    n_actions: int,
    reward_weights,
    labels: tuple,
    discount: float,
    name: str = "",
    feature_components=None,
    extra_meta: dict | None = None,
):
    """Breadth-first construction of a deterministic task from a step function.

    ``step(state, a)`` returns ``(next_state, outcome_vector, reward, is_terminal_next)``.
    Rewards come from the domain rules, independently of the outcome weights.
    Terminal states are not expanded; they become absorbing with zero outcome.
    """
    w = np.asarray(reward_weights, dtype=float)
    d = len(w)
    index = {initial: 0}
    states = [initial]
    terminal = [False]
    succ_rows, sig_rows, rew_rows = [], [], []
    i = 0
    while i < len(states):
        st = states[i]
        row_s = np.full(n_actions, i, dtype=np.int64)
        row_o = np.zeros((n_actions, d))
        row_r = np.zeros(n_actions)
        if not terminal[i]:
            for a in range(n_actions):
                nxt, o, r, term = step(st, a)
                j = index.get(nxt)
                if j is None:
                    j = len(states)
                    index[nxt] = j
                    states.append(nxt)
                    terminal.append(bool(term))
                row_s[a] = j
                row_o[a] = o
                row_r[a] = r
        succ_rows.append(row_s)
        sig_rows.append(row_o)
        rew_rows.append(row_r)
        i += 1
    succ = np.array(succ_rows)
    sig = np.array(sig_rows)[:, :, None, :]
    rew = np.array(rew_rows)
    meta = {"states": states, "index": index}
    meta.update(extra_meta or {})
    mdp = TabularMdp.deterministic(succ, rew, discount, np.array(terminal), 0, name, meta)
    om = OutcomeModel(sig, w, labels, feature_components)
    return mdp, om
