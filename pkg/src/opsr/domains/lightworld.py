"""Rooms in a row separated by locked doors; leaving the last room ends the episode.

Rooms are the wall-free regions of the grid, numbered left to right.  Each
room has a lock ``L`` and a door ``D`` set into one of its walls; the door of
the rightmost room leads outside.  A room may hold a key ``K``.  ``pickup``
takes the key under the agent; ``unlock`` on the lock tile opens the room's
door when the room has no key or its key is held.  Open doors are passable.

Outcomes: change of room index, keys picked up, doors opened, goal reached,
and a constant ``step`` component for the per-action penalty.
"""
from __future__ import annotations

import numpy as np

from opsr.domains.grid import MOVES, GridTaskSpec, build_deterministic_task, with_cells
from opsr.errors import GenerationError

PICKUP, UNLOCK = 4, 5
N_ACTIONS = 6
ACTION_NAMES = ("up", "down", "left", "right", "pickup", "unlock")
LABELS = ("room", "key", "door", "goal", "step")
ITEM_COMPONENTS = (0, 1, 2, 3)
STEP_PENALTY = -1.0
FINAL_REWARD = 1000.0
REWARD_WEIGHTS = (0.0, 0.0, 0.0, FINAL_REWARD - STEP_PENALTY, STEP_PENALTY)
DEFAULT_DISCOUNT = 0.999
SENSOR_RANGE = 20.0
SENSED = ("K", "L", "D")
MIN_ROOM, MAX_ROOM = 5, 15
KEY_PROBABILITY = 1.0 / 3.0


class Layout:
    """Room structure recovered from a lightworld spec."""

    def __init__(self, spec: GridTaskSpec):
        if spec.kind != "lightworld":
            raise ValueError(f"expected a lightworld spec, got {spec.kind}")
        self.spec = spec
        W, H = spec.width, spec.height
        room_of = -np.ones((H, W), dtype=np.int64)
        comps = []
        for y in range(H):
            for x in range(W):
                if spec.glyph(x, y) in "#D" or room_of[y, x] >= 0:
                    continue
                stack = [(x, y)]
                room_of[y, x] = len(comps)
                members = []
                while stack:
                    cx, cy = stack.pop()
                    members.append((cx, cy))
                    for dx, dy in MOVES:
                        nx, ny = cx + dx, cy + dy
                        if spec.inside(nx, ny) and room_of[ny, nx] < 0 and spec.glyph(nx, ny) not in "#D":
                            room_of[ny, nx] = len(comps)
                            stack.append((nx, ny))
                comps.append(members)
        order = sorted(range(len(comps)), key=lambda c: min(comps[c]))
        remap = {c: i for i, c in enumerate(order)}
        self.room_of = np.vectorize(lambda v: remap.get(int(v), -1))(room_of) if comps else room_of
        self.n_rooms = len(comps)
        self.keys = {}
        self.locks = {}
        for (x, y) in spec.find("K"):
            self.keys[int(self.room_of[y, x])] = (x, y)
        for (x, y) in spec.find("L"):
            r = int(self.room_of[y, x])
            if r in self.locks:
                raise ValueError(f"room {r} has more than one lock")
            self.locks[r] = (x, y)
        # each door belongs to the lower-numbered room it touches
        self.doors = {}
        for (x, y) in spec.find("D"):
            touching = {int(self.room_of[y + dy, x + dx]) for dx, dy in MOVES
                        if spec.inside(x + dx, y + dy) and self.room_of[y + dy, x + dx] >= 0}
            if not touching:
                raise ValueError(f"door at {(x, y)} touches no room")
            self.doors[(x, y)] = min(touching)
        self.exit_doors = {pos for pos, r in self.doors.items() if r == self.n_rooms - 1}

    def room_at(self, x: int, y: int) -> int:
        if (x, y) in self.doors:
            return self.doors[(x, y)]
        return int(self.room_of[y, x])


def compile_lightworld(spec: GridTaskSpec):
    """State = (x, y, held-key mask, open-door mask)."""
    lay = Layout(spec)
    meta = spec.meta_dict
    discount = float(meta.get("discount", DEFAULT_DISCOUNT))
    key_at = {pos: r for r, pos in lay.keys.items()}
    lock_at = {pos: r for r, pos in lay.locks.items()}

    def step(st, a):
        x, y, held, opened = st
        delta = [0.0, 0.0, 0.0, 0.0]
        done = False
        if a < 4:
            dx, dy = MOVES[a]
            nx, ny = x + dx, y + dy
            ok = spec.inside(nx, ny) and spec.glyph(nx, ny) != "#"
            if ok and (nx, ny) in lay.doors:
                ok = bool(opened >> lay.doors[(nx, ny)] & 1)
            if ok:
                if (nx, ny) in lay.exit_doors:
                    done = True
                    delta[3] = 1.0
                delta[0] = float(lay.room_at(nx, ny) - lay.room_at(x, y))
                x, y = nx, ny
        elif a == PICKUP:
            r = key_at.get((x, y))
            if r is not None and not held >> r & 1:
                held |= 1 << r
                delta[1] = 1.0
        else:
            r = lock_at.get((x, y))
            if r is not None and not opened >> r & 1 and (r not in lay.keys or held >> r & 1):
                opened |= 1 << r
                delta[2] = 1.0
        reward = FINAL_REWARD if done else STEP_PENALTY
        return (x, y, held, opened), np.array(delta + [1.0]), reward, done

    x0, y0 = spec.start
    return build_deterministic_task(
        (x0, y0, 0, 0), step, N_ACTIONS, REWARD_WEIGHTS, LABELS, discount, name=meta.get("name", ""),
        feature_components=ITEM_COMPONENTS, extra_meta={"kind": "lightworld", "spec": spec, "layout": lay},
    )


def agent_space_features(spec_or_layout, state) -> np.ndarray:
    """Twelve straight-line sensors: (key, lock, door) x (up, down, left, right).

    Each reads ``max(0, 1 - distance / 20)`` for the nearest visible object in
    that direction and 1 when the agent stands on it.  Walls and doors block
    the view; a key already held is no longer sensed.
    """
    lay = spec_or_layout if isinstance(spec_or_layout, Layout) else Layout(spec_or_layout)
    spec = lay.spec
    x, y, held, _ = state
    out = np.zeros((3, 4))

    def present(gx, gy, g):
        c = spec.glyph(gx, gy)
        if c != g:
            return False
        if g == "K":
            return not held >> int(lay.room_of[gy, gx]) & 1
        return True

    for oi, g in enumerate(SENSED):
        if present(x, y, g):
            out[oi, :] = 1.0
            continue
        for di, (dx, dy) in enumerate(MOVES):
            dist = 1
            while True:
                cx, cy = x + dx * dist, y + dy * dist
                if not spec.inside(cx, cy) or dist >= SENSOR_RANGE:
                    break
                if present(cx, cy, g):
                    out[oi, di] = max(0.0, 1.0 - dist / SENSOR_RANGE)
                    break
                if spec.glyph(cx, cy) in "#D":
                    break
                dist += 1
    return out.ravel()


def agent_space_matrix(mdp) -> np.ndarray:
    lay = mdp.meta["layout"]
    return np.array([agent_space_features(lay, st) for st in mdp.meta["states"]])


def lightworld_generate(seed: int, n_rooms: int = 3, min_size: int = MIN_ROOM, max_size: int = MAX_ROOM,
                        key_probability: float = KEY_PROBABILITY) -> GridTaskSpec:
    """Rooms left to right, sizes uniform in ``[min_size, max_size]``, doors in shared walls."""
    if not 2 <= n_rooms <= 5:
        raise GenerationError("n_rooms must be in 2..5")
    rng = np.random.default_rng(seed)
    widths = rng.integers(min_size, max_size + 1, size=n_rooms)
    heights = rng.integers(min_size, max_size + 1, size=n_rooms)
    W = int(widths.sum()) + n_rooms + 1
    H = int(heights.max()) + 2
    grid = [["#"] * W for _ in range(H)]
    left = 1
    start = None
    for r in range(n_rooms):
        w, h = int(widths[r]), int(heights[r])
        cells = [(left + i, 1 + j) for j in range(h) for i in range(w)]
        for cx, cy in cells:
            grid[cy][cx] = "."
        right_wall = left + w
        span = min(h, int(heights[r + 1])) if r + 1 < n_rooms else h
        door_y = 1 + int(rng.integers(0, span))
        grid[door_y][right_wall] = "D"
        has_key = rng.random() < key_probability
        need = 2 + (1 if has_key else 0) + (1 if r == 0 else 0)
        picks = rng.choice(len(cells), size=need, replace=False)
        lx, ly = cells[int(picks[0])]
        grid[ly][lx] = "L"
        if has_key:
            kx, ky = cells[int(picks[1])]
            grid[ky][kx] = "K"
        if r == 0:
            start = cells[int(picks[-1])]
        left = right_wall + 1
    grid[start[1]][start[0]] = "A"
    meta = (("seed", str(seed)), ("rooms", ",".join(f"{int(w)}x{int(h)}" for w, h in zip(widths, heights))))
    return with_cells("lightworld", grid, meta)


def room_sizes(spec: GridTaskSpec) -> list[tuple]:
    return [tuple(int(v) for v in part.split("x")) for part in spec.meta_dict["rooms"].split(",")]
