import filecmp
import json
import os
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from conftest import CORPUS, requires_solver
from rankverify import report as report_mod
from rankverify import smt, verifier
from rankverify.cli import run


def cli(*args, env=None):
    full = dict(os.environ, **(env or {}))
    return subprocess.run([sys.executable, "-m", "rankverify.cli", *map(str, args)],
                          capture_output=True, text=True, env=full, timeout=900)


def rule(name):
    return CORPUS / f"{name}.json"


@requires_solver
@pytest.mark.parametrize("name,code", [
    ("padlow-combine", 0),
    ("slice-dyup", 1),
    ("reduce-over-concat-nohint", 2),
])
def test_verify_exit_codes(name, code):
    proc = cli("verify", rule(name))
    assert proc.returncode == code, proc.stdout + proc.stderr


def test_missing_file_is_tool_error():
    proc = cli("verify", "does-not-exist.json")
    assert proc.returncode == 3
    assert "no such file" in proc.stdout + proc.stderr


def test_bad_option_is_tool_error():
    assert cli("verify", "--no-such-flag", rule("padlow-combine")).returncode == 3
    assert cli("verify", "--max-rank-override", "c", rule("padlow-combine")).returncode == 3


def test_missing_solver_is_tool_error():
    proc = cli("verify", "--solver", "definitely-not-a-solver", rule("padlow-combine"))
    assert proc.returncode == 3
    assert "solver not found" in proc.stdout


def test_in_process_runner_matches():
    assert run(["bounds", str(rule("padlow-combine"))]) == 0
    assert run(["verify", "--bogus"]) == 3


def test_bounds_text_and_json(tmp_path):
    proc = cli("bounds", rule("padlow-combine"), rule("dyslice-to-slice"))
    assert proc.returncode == 0
    assert "c: bound 2" in proc.stdout and "c: bound 1" in proc.stdout
    out = tmp_path / "b.json"
    assert cli("bounds", "--format", "json", "-o", out, CORPUS).returncode == 0
    doc = json.loads(out.read_text())
    report_mod.validate(doc)
    assert len(doc["bounds"]) == len([p for p in CORPUS.glob("*.json") if p.name != "expected.json"])


@requires_solver
def test_verify_json_round_trip(tmp_path):
    out = tmp_path / "r.json"
    proc = cli("verify", "--format", "json", "-o", out, rule("slice-dyup"), rule("transpose-sum"))
    assert proc.returncode == 1
    text = out.read_text()
    again = report_mod.Report.loads(text).dumps()
    assert again == text
    doc = json.loads(text)
    assert doc["summary"] == {"Invalid": 1, "Verified": 1}
    assert doc["exit_code"] == 1


def test_fuzz_finds_mismatch_and_passes_valid():
    assert cli("fuzz", "--trials", "300", rule("slice-dyup")).returncode == 1
    assert cli("fuzz", "--trials", "50", rule("transpose-sum")).returncode == 0


DUMP_RULES = ["padlow-combine", "slice-dyup", "reduce-over-concat", "reverse-of-pad",
              "fold-conv-input-pad-generalized"]


def _tree(d):
    return sorted(p.relative_to(d) for p in Path(d).rglob("*.smt2"))


def dump_and_replay(tmp_path, names=DUMP_RULES):
    """Dump twice, compare bytes, re-run each dump standalone; returns the number of replays."""
    dumps = [tmp_path / "a", tmp_path / "b"]
    reports = []
    for d in dumps:
        out = d.with_suffix(".json")
        cli("verify", "--format", "json", "-o", out, "--dump-smt", d, *map(rule, names))
        reports.append(json.loads(out.read_text()))
    files = _tree(dumps[0])
    assert files and files == _tree(dumps[1])
    for f in files:
        assert filecmp.cmp(dumps[0] / f, dumps[1] / f, shallow=False), f

    checked = 0
    config = smt.SolverConfig(timeout_ms=10000)
    for v in reports[0]["verdicts"]:
        for t in v["tasks"]:
            d = dumps[0] / v["rule"] / verifier.task_name(t["ranks"])
            for ob in t["obligations"]:
                if ob["status"] not in ("sat", "unsat"):
                    continue
                if ob["note"].startswith("proved in"):
                    parts = sorted(d.glob(f"{ob['name']}.part*.smt2"))
                    assert parts, (v["rule"], d.name, ob["name"])
                    statuses = {smt.run_file(p, config).status for p in parts}
                    assert statuses == {"unsat"}, (v["rule"], d.name, ob["name"], statuses)
                else:
                    got = smt.run_file(d / f"{ob['name']}.smt2", config).status
                    assert got == ob["status"], (v["rule"], d.name, ob["name"])
                checked += 1
    return checked


@requires_solver
def test_dump_is_deterministic_and_replayable(tmp_path):
    assert dump_and_replay(tmp_path) >= 10
