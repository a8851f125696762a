"""One check per acceptance criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the lines appear inline) or
directly with ``python tests/test_acceptance.py``.
"""

import json
import math
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from conftest import ROOT, corpus_files, expected, requires_solver  # noqa: E402
from rankverify import analysis, concrete, rulefile, verifier  # noqa: E402
from rankverify.errors import SamplingExhausted  # noqa: E402

EXPECTED = expected()
PATHS = {p.stem: p for p in corpus_files()}
_VERDICTS = {}


def _rule(name):
    return rulefile.load_path(PATHS[name])


def _verdict(name, keep_going=False):
    key = (name, keep_going)
    if key not in _VERDICTS:
        start = time.monotonic()
        v = verifier.verify(_rule(name), verifier.VerifyConfig(keep_going=keep_going), str(PATHS[name]))
        _VERDICTS[key] = (v, time.monotonic() - start)
    return _VERDICTS[key]


def _line(number, ok, detail):
    return f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"


def criterion_1():
    details, ok = [], True
    for name, want in (("padlow-combine", 2), ("dyslice-to-slice", 1)):
        start = time.monotonic()
        got = analysis.bound_reports(_rule(name))["c"].bound
        secs = time.monotonic() - start
        ok &= got == want and secs < 1.0
        details.append(f"{name} c={got} ({secs:.3f}s)")
    return ok, "; ".join(details)


CRITERION_2 = ["padlow-combine", "dyslice-to-slice", "transpose-sum", "expand-padlow",
               "fold-conv-input-pad-generalized"]


def criterion_2():
    details, ok = [], True
    for name in CRITERION_2:
        v, secs = _verdict(name)
        ok &= v.overall == "Verified" and v.conclusive and secs < 30
        details.append(f"{name} {v.overall} {secs:.1f}s")
    return ok, "; ".join(details)


def criterion_3():
    v, _ = _verdict("slice-dyup", keep_going=True)
    cex = v.counterexample
    ok = v.overall == "Invalid" and cex is not None and cex.confirmed
    ok = ok and max(cex.ranks.values()) <= 2
    replayed = ok and _replay("slice-dyup", cex)
    rank1 = [t for t in v.tasks if max(t.ranks.values()) == 1]
    rank1_unsat = bool(rank1) and all(
        t.status == "Verified" and all(o.status == "unsat" for o in t.obligations) for t in rank1)
    ok = ok and replayed and rank1_unsat
    where = cex.ranks if cex else None
    return ok, f"{v.overall} at ranks {where}, oracle replay {replayed}, rank-1 task unsat {rank1_unsat}"


def _replay(name, cex):
    import numpy as np
    from rankverify import instantiate

    (tag,) = {k.rsplit(".", 1)[1] for k in cex.model}
    ir_ = instantiate.instantiate(_rule(name), cex.ranks, tag)
    env = {n: concrete.ConcreteTensor(t["axes"], np.array(t["data"], dtype=object).reshape(t["sizes"]),
                                      ir_.env[n].elem)
           for n, t in cex.tensors.items()}
    return concrete.compare(ir_.lhs, ir_.rhs, env, dict(cex.model)) is not None


def criterion_4():
    bad = []
    for name in PATHS:
        v, _ = _verdict(name, keep_going=True)
        want = math.prod(b.bound for b in v.bounds.values())
        if v.task_count != want:
            bad.append(f"{name} {v.task_count}!={want}")
    return not bad, "all rules" if not bad else "; ".join(bad)


def criterion_5():
    bad, checked = [], 0
    for name in sorted(PATHS):
        rule = _rule(name)
        verdict = EXPECTED[name]["verdict"]
        bounds = {c: r.bound for c, r in analysis.bound_reports(rule).items()}
        if verdict == "Verified":
            for ranks in analysis.task_set(rule, bounds):
                try:
                    rep = concrete.differential_test(rule, ranks, trials=200, seed=0, size_cap=4, value_cap=4,
                                                     stop_at_first=False)
                except SamplingExhausted as exc:
                    bad.append(f"{name} {ranks}: {exc}")
                    continue
                checked += 1
                if rep.mismatches:
                    bad.append(f"{name} {ranks}: {rep.mismatches} mismatches")
        elif verdict == "Invalid":
            found = False
            for ranks in analysis.task_set(rule, bounds):
                try:
                    rep = concrete.differential_test(rule, ranks, trials=10_000, seed=0, size_cap=4,
                                                     value_cap=4, stop_at_first=True)
                except SamplingExhausted:
                    continue
                if rep.mismatches:
                    found = True
                    break
            if not found:
                v, _ = _verdict(name)
                found = v.counterexample is not None and _replay(name, v.counterexample)
            checked += 1
            if not found:
                bad.append(f"{name}: no concrete mismatch")
    return not bad, f"{checked} checks" if not bad else "; ".join(bad)


def criterion_6():
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           str(ROOT / "tests" / "test_semantics.py")], capture_output=True, text=True)
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    return proc.returncode == 0, tail


def criterion_7():
    hinted, _ = _verdict("reduce-over-concat")
    bare, _ = _verdict("reduce-over-concat-nohint")
    ok = hinted.overall == "Verified" and bare.overall == "Unknown" and "reduction without hint" in bare.reason
    return ok, f"hinted {hinted.overall}; without hint {bare.overall} ({bare.reason})"


def criterion_8():
    from test_cli import dump_and_replay

    with tempfile.TemporaryDirectory() as tmp:
        try:
            n = dump_and_replay(Path(tmp))
        except AssertionError as exc:
            return False, f"dump check failed: {exc}"
    return n >= 10, f"byte-identical dumps, {n} standalone re-runs reproduced"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
            criterion_8]


def _report(capsys, number, fn):
    ok, detail = fn()
    with capsys.disabled():
        print("\n" + _line(number, ok, detail))
    assert ok, detail


def test_criterion_1_bounds(capsys):
    _report(capsys, 1, criterion_1)


@requires_solver
def test_criterion_2_verified_rules(capsys):
    _report(capsys, 2, criterion_2)


@requires_solver
def test_criterion_3_slice_dyup(capsys):
    _report(capsys, 3, criterion_3)


@requires_solver
def test_criterion_4_task_count(capsys):
    _report(capsys, 4, criterion_4)


@pytest.mark.slow
def test_criterion_5_soundness(capsys):
    _report(capsys, 5, criterion_5)


def test_criterion_6_operator_semantics(capsys):
    _report(capsys, 6, criterion_6)


@requires_solver
def test_criterion_7_reduction_hint(capsys):
    _report(capsys, 7, criterion_7)


@requires_solver
def test_criterion_8_dump_determinism(capsys):
    _report(capsys, 8, criterion_8)


if __name__ == "__main__":
    failed = 0
    for k, fn in enumerate(CRITERIA, 1):
        ok, detail = fn()
        print(_line(k, ok, detail), flush=True)
        failed += not ok
    sys.exit(1 if failed else 0)
