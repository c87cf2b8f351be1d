"""Tiny gridworlds: four moves, a terminal goal tile and optional red tiles.

Outcomes are indicators of where a transition lands: ``goal`` (and ``red``
when requested with ``meta outcomes=goal,red``).  Moves into walls or off the
grid leave the agent in place.
"""
from __future__ import annotations

import itertools

import numpy as np

from opsr.domains.grid import MOVES, GridTaskSpec, build_deterministic_task, parse_task

DEFAULT_DISCOUNT = 0.95
MINI_SHAPES = ((3, 2), (2, 3))
MAX_OBSTACLES = 2


def compile_mini(spec: GridTaskSpec):
    meta = spec.meta_dict
    outcomes = tuple(x.strip() for x in meta.get("outcomes", "goal").split(","))
    for o in outcomes:
        if o not in ("goal", "red"):
            raise ValueError(f"unknown mini outcome {o!r}")
    default_w = {"goal": 1.0, "red": -1.0}
    if "reward_weights" in meta:
        w = [float(x) for x in meta["reward_weights"].split(",")]
        if len(w) != len(outcomes):
            raise ValueError("reward_weights must match outcomes")
    else:
        w = [default_w[o] for o in outcomes]
    discount = float(meta.get("discount", DEFAULT_DISCOUNT))

    def passable(x, y):
        return spec.inside(x, y) and spec.glyph(x, y) != "#"

    def step(pos, a):
        dx, dy = MOVES[a]
        nx, ny = pos[0] + dx, pos[1] + dy
        nxt = (nx, ny) if passable(nx, ny) else pos
        g = spec.glyph(*nxt)
        o = np.array([1.0 if g == ("G" if name == "goal" else "R") else 0.0 for name in outcomes])
        r = sum(wi for wi, oi in zip(w, o) if oi)
        return nxt, o, r, g == "G"

    return build_deterministic_task(
        tuple(spec.start), step, 4, w, outcomes, discount, name=meta.get("name", ""), extra_meta={"kind": "mini", "spec": spec}
    )


def mini_layouts():
    """Every 2x3 / 3x2 layout with 0-2 obstacles, goal cell and distinct start cell."""
    for W, H in MINI_SHAPES:
        cells = [(x, y) for y in range(H) for x in range(W)]
        for n_obs in range(MAX_OBSTACLES + 1):
            for obs in itertools.combinations(cells, n_obs):
                free = [c for c in cells if c not in obs]
                for goal in free:
                    for start in free:
                        if start == goal:
                            continue
                        grid = [["." for _ in range(W)] for _ in range(H)]
                        for x, y in obs:
                            grid[y][x] = "#"
                        grid[goal[1]][goal[0]] = "G"
                        grid[start[1]][start[0]] = "A"
                        yield "\n".join(["domain=mini"] + ["".join(r) for r in grid]) + "\n"


def enumerate_mini_domain():
    """All mini tasks as ``(spec, mdp, outcome_model)`` triples."""
    out = []
    for text in mini_layouts():
        spec = parse_task(text)
        mdp, om = compile_mini(spec)
        out.append((spec, mdp, om))
    return out
