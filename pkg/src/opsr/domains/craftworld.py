"""Crafting gridworld: gather wood and stone, refine them at benches, craft a hammer.

Actions are the four moves plus ``use``.  Walking onto a resource picks it
up.  ``use`` acts on the bench the agent faces; facing is the direction of the
last attempted move (initially up).  Benches: ``1`` turns wood into a handle,
``2`` turns stone into a head, ``3`` turns handle + head into the hammer,
which ends the episode.  Benches and walls block movement.

Outcomes are the per-transition changes in wood, stone, handle, head and
hammer counts plus a constant ``step`` component carrying the per-action
penalty.  Each action costs 1; the final (hammer) action instead pays 1000.
"""
from __future__ import annotations

import numpy as np

from opsr.domains.grid import MOVES, GridTaskSpec, build_deterministic_task, with_cells
from opsr.errors import GenerationError

USE = 4
N_ACTIONS = 5
ACTION_NAMES = ("up", "down", "left", "right", "use")
LABELS = ("wood", "stone", "handle", "head", "hammer", "step")
ITEM_COMPONENTS = (0, 1, 2, 3, 4)
STEP_PENALTY = -1.0
FINAL_REWARD = 1000.0
REWARD_WEIGHTS = (0.0, 0.0, 0.0, 0.0, FINAL_REWARD - STEP_PENALTY, STEP_PENALTY)
DEFAULT_DISCOUNT = 0.999
BENCHES = "123"
RESOURCES = "WS"


def compile_craftworld(spec: GridTaskSpec):
    """State = (x, y, facing, taken resource mask, wood, stone, handle, head)."""
    meta = spec.meta_dict
    discount = float(meta.get("discount", DEFAULT_DISCOUNT))
    resources = [(x, y, g) for y in range(spec.height) for x in range(spec.width) if (g := spec.glyph(x, y)) in RESOURCES]
    res_index = {(x, y): i for i, (x, y, _) in enumerate(resources)}

    def blocked(x, y):
        return not spec.inside(x, y) or spec.glyph(x, y) == "#" or spec.glyph(x, y) in BENCHES

    def step(st, a):
        x, y, facing, taken, wood, stone, handle, head = st
        delta = [0.0] * 5
        done = False
        if a < 4:
            dx, dy = MOVES[a]
            nx, ny = x + dx, y + dy
            facing = a
            if not blocked(nx, ny):
                x, y = nx, ny
                i = res_index.get((x, y))
                if i is not None and not taken >> i & 1:
                    taken |= 1 << i
                    if resources[i][2] == "W":
                        wood += 1
                        delta[0] = 1.0
                    else:
                        stone += 1
                        delta[1] = 1.0
        else:
            dx, dy = MOVES[facing]
            fx, fy = x + dx, y + dy
            bench = spec.glyph(fx, fy) if spec.inside(fx, fy) else ""
            if bench == "1" and wood > 0:
                wood, handle = wood - 1, handle + 1
                delta[0], delta[2] = -1.0, 1.0
            elif bench == "2" and stone > 0:
                stone, head = stone - 1, head + 1
                delta[1], delta[3] = -1.0, 1.0
            elif bench == "3" and handle > 0 and head > 0:
                handle, head = handle - 1, head - 1
                delta[2], delta[3], delta[4] = -1.0, -1.0, 1.0
                done = True
        nxt = (x, y, facing, taken, wood, stone, handle, head)
        reward = FINAL_REWARD if done else STEP_PENALTY
        return nxt, np.array(delta + [1.0]), reward, done

    x0, y0 = spec.start
    initial = (x0, y0, 0, 0, 0, 0, 0, 0)
    return build_deterministic_task(
        initial, step, N_ACTIONS, REWARD_WEIGHTS, LABELS, discount, name=meta.get("name", ""),
        feature_components=ITEM_COMPONENTS, extra_meta={"kind": "craftworld", "spec": spec},
    )


def inventory_of(state) -> dict:
    _, _, _, _, wood, stone, handle, head = state
    return {"wood": wood, "stone": stone, "handle": handle, "head": head}


def craftworld_generate(seed: int, width: int = 4, height: int = 4, max_retries: int = 1000) -> GridTaskSpec:
    """Random placement of agent, wood, stone and the three benches on an open grid.

    Layouts are redrawn until the hammer can be crafted.
    """
    from opsr.mdp import reachable_states

    glyphs = ["A", "W", "S", "1", "2", "3"]
    if width * height < len(glyphs):
        raise GenerationError(f"{width}x{height} grid too small for {len(glyphs)} items")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        cells = rng.choice(width * height, size=len(glyphs), replace=False)
        grid = [["." for _ in range(width)] for _ in range(height)]
        for c, g in zip(cells, glyphs):
            grid[int(c) // width][int(c) % width] = g
        spec = with_cells("craftworld", grid, (("seed", str(seed)),))
        mdp, _ = compile_craftworld(spec)
        if mdp.terminal[reachable_states(mdp, 0)].any():
            return spec
    raise GenerationError(f"no solvable craftworld layout after {max_retries} attempts (seed {seed})")
