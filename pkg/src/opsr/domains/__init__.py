"""Grid domains: task format, compilers, generators and the shipped task corpus."""
from __future__ import annotations

from importlib import resources

from opsr.domains.craftworld import compile_craftworld, craftworld_generate
from opsr.domains.grid import GridTaskSpec, parse_task, render_task
from opsr.domains.lightworld import agent_space_features, compile_lightworld, lightworld_generate
from opsr.domains.mini import compile_mini, enumerate_mini_domain

COMPILERS = {"mini": compile_mini, "craftworld": compile_craftworld, "lightworld": compile_lightworld}


def compile_task(spec: GridTaskSpec):
    """``(TabularMdp, OutcomeModel)`` for any supported domain kind."""
    return COMPILERS[spec.kind](spec)


def load_task(path) -> GridTaskSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_task(fh.read())


def shipped_tasks() -> dict:
    """Task name (file stem) -> spec for every ``.task`` file in the corpus."""
    out = {}
    root = resources.files("opsr.domains") / "tasks"
    for entry in sorted(root.iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".task"):
            out[entry.name[:-5]] = parse_task(entry.read_text(encoding="utf-8"))
    return out


__all__ = [
    "GridTaskSpec", "parse_task", "render_task", "compile_task", "load_task", "shipped_tasks",
    "compile_mini", "enumerate_mini_domain", "compile_craftworld", "craftworld_generate",
    "compile_lightworld", "lightworld_generate", "agent_space_features",
]
