import json
import subprocess
import sys

import pytest

from opsr.harness.cli import build_parser, main

CONFIG = {
    "domain": "craftworld", "n_train": 2, "n_test": 1, "repetitions": 2, "seed": 1,
    "discovery": {"K": 2, "k": 1, "max_epochs": 3},
    "learner": {"episodes": 3, "max_episode_steps": 50},
}


@pytest.fixture()
def workdir(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps(CONFIG))
    return tmp_path


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_parser_lists_commands():
    sub = build_parser()._subparsers._group_actions[0].choices
    assert set(sub) == {"enumerate-mini", "solve", "sample-traces", "discover", "evaluate", "report", "verify-theory"}


def test_enumerate_mini_small_horizon(tmp_path, capsys):
    code, out, _ = run(["enumerate-mini", "--horizon", "3", "--out", str(tmp_path), "--embed-k", "1"], capsys)
    assert code == 0
    summary = json.loads(out)
    assert summary["tasks"] == 660 and summary["states"] == 2544 and summary["classes"] == 217
    assert summary["sequences"] == 64
    lines = (tmp_path / "classes.csv").read_text().splitlines()
    assert lines[0] == "task_id,state_id,class" and len(lines) == 2545
    assert (tmp_path / "embedding.csv").read_text().startswith("state_id,task_id,x0,x1")


def test_solve(capsys):
    from importlib import resources
    path = resources.files("opsr.domains") / "tasks" / "mini_detour.task"
    code, out, _ = run(["solve", str(path)], capsys)
    res = json.loads(out)
    assert code == 0 and res["reached_terminal"] and len(res["actions"]) == 3
    assert res["story"] == ["goal"]


def test_missing_file_is_reported(tmp_path, capsys):
    code, _, err = run(["solve", str(tmp_path / "nope.task")], capsys)
    assert code == 2 and "nope.task" in err


def test_parse_error_is_reported(tmp_path, capsys):
    p = tmp_path / "bad.task"
    p.write_text("domain=mini\nA?G\n")
    code, _, err = run(["solve", str(p)], capsys)
    assert code == 2 and "line 2, column 2" in err


def test_pipeline_and_determinism(workdir, capsys):
    cfg = str(workdir / "cfg.json")
    traces = workdir / "traces"
    assert main(["sample-traces", "--config", cfg, "--out", str(traces)]) == 0
    assert len((traces / "traces.jsonl").read_text().splitlines()) == 2
    opts = workdir / "options.json"
    assert main(["discover", "--config", cfg, "--traces", str(traces), "--out", str(opts)]) == 0
    assert (workdir / "options_training_log.csv").exists()
    capsys.readouterr()
    outs = []
    for name in ("r1", "r2"):
        assert main(["evaluate", "--config", cfg, "--options", str(opts), "--out", str(workdir / name)]) == 0
        outs.append({f: (workdir / name / f).read_bytes() for f in
                     ("curves.csv", "aurc.csv", "occupancy.csv", "report.json", "curves.svg")})
    assert outs[0] == outs[1]
    (workdir / "r1" / "curves.svg").unlink()
    assert main(["report", "--in", str(workdir / "r1"), "--formats", "svg"]) == 0
    assert (workdir / "r1" / "curves.svg").read_bytes() == outs[0]["curves.svg"]
    assert main(["report", "--in", str(workdir / "r1"), "--formats", "bogus"]) == 2


def test_verify_theory_small(capsys):
    code, out, _ = run(["verify-theory", "--max-states", "3", "--n-tasks", "5"], capsys)
    lines = out.strip().splitlines()
    assert code == 0 and len(lines) == 6 and all(l.startswith("PASS") for l in lines)


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "opsr.harness.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "enumerate-mini" in res.stdout
