"""Command line entry point: ``opsr <command> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np


def _load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def cmd_enumerate_mini(args) -> int:
    from opsr.domains import enumerate_mini_domain
    from opsr.opsr import laplacian_eigenmap, embedding_csv_rows, opsr_length, opsr_matrix, union_partition

    tasks = enumerate_mini_domain()
    pairs = [(m, o) for _, m, o in tasks]
    phi = union_partition(pairs, args.horizon)
    summary = {
        "tasks": len(tasks),
        "states": int(sum(m.n_states for m, _ in pairs)),
        "horizon": args.horizon,
        "classes": phi.n_classes,
        "opsr_length": opsr_length(4, 1, args.horizon, "terminal_up_to"),
        "sequences": 4 ** args.horizon,
    }
    print(json.dumps(summary, sort_keys=True))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
            fh.write(json.dumps(summary, sort_keys=True, indent=1) + "\n")
        state_ids, task_ids = [], []
        for t, (m, _) in enumerate(pairs):
            state_ids.extend(range(m.n_states))
            task_ids.extend([t] * m.n_states)
        rows = [["task_id", "state_id", "class"]]
        rows += [[t, s, lab] for t, s, lab in zip(task_ids, state_ids, phi.class_of)]
        _write_csv(os.path.join(args.out, "classes.csv"), rows)
        if args.embed_k > 0:
            feats = np.vstack([opsr_matrix(m, o, args.embed_k, "terminal_up_to") for m, o in pairs])
            emb = laplacian_eigenmap(feats, knn=args.knn, out_dims=2)
            _write_csv(os.path.join(args.out, "embedding.csv"), embedding_csv_rows(emb, state_ids, task_ids))
    return 0


def cmd_solve(args) -> int:
    from opsr.domains import compile_task, load_task
    from opsr.harness.analysis import extract_story
    from opsr.mdp import greedy_trace, solve_optimal, validate_mdp

    spec = load_task(args.taskfile)
    mdp, om = compile_task(spec)
    problems = validate_mdp(mdp)
    policy, v = solve_optimal(mdp)
    states, actions, rewards = greedy_trace(mdp, policy, max_steps=args.max_steps)
    out = {
        "domain": spec.kind,
        "states": mdp.n_states,
        "value": float(v[mdp.initial_state]),
        "actions": actions,
        "return": float(sum(rewards)),
        "reached_terminal": bool(mdp.terminal[states[-1]]),
        "story": list(extract_story(states, actions, om, mdp)),
        "problems": problems,
    }
    print(json.dumps(out, sort_keys=True))
    return 0 if not problems else 1


def cmd_sample_traces(args) -> int:
    from opsr.discovery import dumps_traces
    from opsr.domains import render_task
    from opsr.harness.protocol import ProtocolConfig, demonstration_traces, task_sets

    cfg = ProtocolConfig.from_dict(_load_json(args.config))
    train, _ = task_sets(cfg)
    os.makedirs(os.path.join(args.out, "tasks"), exist_ok=True)
    for tid, spec in train:
        with open(os.path.join(args.out, "tasks", f"{tid}.task"), "w", encoding="utf-8") as fh:
            fh.write(render_task(spec))
    with open(os.path.join(args.out, "traces.jsonl"), "w", encoding="utf-8") as fh:
        fh.write(dumps_traces(demonstration_traces(train)))
    print(f"wrote {len(train)} tasks and traces to {args.out}")
    return 0


def cmd_discover(args) -> int:
    from opsr.discovery import loads_traces, training_log_csv
    from opsr.domains import load_task
    from opsr.harness.protocol import ProtocolConfig, discovery_summary, fit_feature_spec, task_features
    from opsr.discovery import discover_options
    from opsr.domains import compile_task

    cfg = ProtocolConfig.from_dict(_load_json(args.config))
    with open(os.path.join(args.traces, "traces.jsonl"), encoding="utf-8") as fh:
        traces = loads_traces(fh.read())
    ids = sorted({t.task_id for t in traces})
    tasks = [(tid, load_task(os.path.join(args.traces, "tasks", f"{tid}.task"))) for tid in ids]
    spec = fit_feature_spec(tasks, cfg.discovery)
    feats = task_features(tasks, spec)
    n_actions = compile_task(tasks[0][1])[0].n_actions
    res = discover_options(traces, feats, spec, cfg.discovery.K, cfg.discovery, n_actions=n_actions)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(res.option_set.dumps() + "\n")
    log_path = os.path.splitext(args.out)[0] + "_training_log.csv"
    with open(log_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(training_log_csv(res.log))
    print(json.dumps(discovery_summary(res), sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    from opsr.discovery import ExtendedOptionSet
    from opsr.harness.protocol import ProtocolConfig, evaluate
    from opsr.harness.report import emit_report

    cfg = ProtocolConfig.from_dict(_load_json(args.config))
    with open(args.options, encoding="utf-8") as fh:
        option_set = ExtendedOptionSet.loads(fh.read())
    report = evaluate(cfg, option_set)
    paths = emit_report(report, args.out, ("csv", "json", "svg"))
    opt, base = report.aurc_pairs()
    print(json.dumps({"mean_aurc_options": float(opt.mean()), "mean_aurc_primitive": float(base.mean()),
                      "files": sorted(os.path.basename(p) for p in paths)}, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    from opsr.harness.report import emit_report, load_report

    formats = tuple(f.strip() for f in args.formats.split(",") if f.strip())
    paths = emit_report(load_report(args.in_dir), args.in_dir, formats)
    for p in paths:
        print(p)
    return 0


def cmd_verify_theory(args) -> int:
    from opsr.verify import run_all

    results = run_all(seed=args.seed, max_states=args.max_states, n_tasks=args.n_tasks)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="opsr", description="Outcome-predictive state abstractions and option discovery.")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("enumerate-mini", help="count mini-domain tasks, states and abstract classes")
    e.add_argument("--horizon", type=int, default=6)
    e.add_argument("--out", default=None)
    e.add_argument("--embed-k", type=int, default=3, help="OPSR length used for the embedding (0 disables)")
    e.add_argument("--knn", type=int, default=8)
    e.set_defaults(func=cmd_enumerate_mini)

    s = sub.add_parser("solve", help="solve a task file exactly")
    s.add_argument("taskfile")
    s.add_argument("--max-steps", type=int, default=1000)
    s.set_defaults(func=cmd_solve)

    t = sub.add_parser("sample-traces", help="write training tasks and optimal traces for discovery")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_sample_traces)

    d = sub.add_parser("discover", help="fit options to demonstration traces")
    d.add_argument("--config", required=True)
    d.add_argument("--traces", required=True, help="directory with traces.jsonl and tasks/<task_id>.task")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_discover)

    v = sub.add_parser("evaluate", help="train option-less and option-enabled learners on test tasks")
    v.add_argument("--config", required=True)
    v.add_argument("--options", required=True)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="re-emit report files from report.json")
    r.add_argument("--in", dest="in_dir", required=True)
    r.add_argument("--formats", default="csv,svg")
    r.set_defaults(func=cmd_report)

    th = sub.add_parser("verify-theory", help="run the brute-force abstraction property suites")
    th.add_argument("--max-states", type=int, default=8)
    th.add_argument("--seed", type=int, default=0)
    th.add_argument("--n-tasks", type=int, default=200)
    th.set_defaults(func=cmd_verify_theory)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"opsr {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
