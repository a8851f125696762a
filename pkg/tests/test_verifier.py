import functools
import json

import numpy as np
import pytest

from conftest import corpus_files, expected, requires_solver
from rankverify import concrete, rulefile, smt, split, symeval, verifier
from rankverify import terms as T

EXPECTED = expected()
PATHS = {p.stem: p for p in corpus_files()}

pytestmark = requires_solver


@functools.lru_cache(maxsize=None)
def verdict_of(name):
    return verifier.verify(rulefile.load_path(PATHS[name]), verifier.VerifyConfig(), str(PATHS[name]))


def replay(rule, cex):
    """Rebuild the counterexample from its JSON form and run the interpreter on it."""
    from rankverify import instantiate

    tags = {k.rsplit(".", 1)[1] for k in cex.model}
    assert len(tags) == 1, tags
    ir_ = instantiate.instantiate(rule, cex.ranks, tags.pop())
    env = {}
    for name, t in cex.tensors.items():
        data = np.array(t["data"], dtype=object).reshape(t["sizes"])
        env[name] = concrete.ConcreteTensor(t["axes"], data, ir_.env[name].elem)
    return concrete.compare(ir_.lhs, ir_.rhs, env, dict(cex.model))


@pytest.mark.parametrize("name", sorted(PATHS))
def test_corpus_verdict(name):
    v = verdict_of(name)
    want = EXPECTED[name]["verdict"]
    assert v.overall == want, (v.reason, [(t.ranks, t.status, t.reason) for t in v.tasks])
    assert v.conclusive
    if want == "Verified":
        assert all(t.status == "Verified" for t in v.tasks)
        assert v.counterexample is None


@pytest.mark.parametrize("name", sorted(n for n in PATHS if EXPECTED[n]["verdict"] == "Invalid"))
def test_invalid_counterexample_replays(name):
    v = verdict_of(name)
    cex = v.counterexample
    assert cex is not None and cex.confirmed
    assert replay(rulefile.load_path(PATHS[name]), cex) is not None


def test_unknown_without_hint_reason():
    v = verdict_of("reduce-over-concat-nohint")
    assert v.overall == "Unknown"
    assert "reduction without hint" in v.reason


def test_verdict_json_round_trip():
    for name in ("slice-dyup", "padlow-combine"):
        v = verdict_of(name)
        doc = json.loads(json.dumps(v.to_json()))
        assert verifier.Verdict.from_json(doc).to_json() == doc


def _context(name, ranks):
    task = verifier._Task(rulefile.load_path(PATHS[name]), ranks, verifier.VerifyConfig(), 0)
    ir_ = task.ir
    lt, _ = symeval.sym_eval(ir_.lhs, ir_.env, task.inst.fresh)
    rt, _ = symeval.sym_eval(ir_.rhs, ir_.env, task.inst.fresh)
    access = {a: task.inst.fresh("acc", a, "access") for a in lt.axes}
    return verifier._Context(task, lt, rt, access)


def test_corrupted_model_is_not_confirmed():
    """A bogus sat answer for a correct rule must not become an Invalid verdict."""
    ctx = _context("padlow-combine", {"c": 1})
    model = {}
    for name, info in ctx.task.inst.info.items():
        if info.role in ("size", "attr"):
            model[name] = 1
    for s in ctx.access.values():
        model[s.val] = 0
    fake = smt.SolverResult("sat", model=model)
    cex = verifier.extract_counterexample(fake, ctx, "value")
    assert not cex.confirmed


def test_negative_size_model_is_suspect():
    ctx = _context("padlow-combine", {"c": 1})
    model = {n: -3 for n, info in ctx.task.inst.info.items() if info.role == "size"}
    cex = verifier.extract_counterexample(smt.SolverResult("sat", model=model), ctx, "value")
    assert not cex.confirmed and "negative" in cex.note


def test_model_parser_reads_functions_and_skips_macros():
    text = """(
  (define-fun s.x.0 () Int 3)
  (define-fun l.x.0 () Int (- 2))
  (define-fun _d4 () Int (div s.x.0 0))
  (define-fun Y ((x!0 Int)) Int (ite (= x!0 1) 7 (- 1)))
  (define-fun flag () Bool false)
)"""
    consts, funcs = smt.parse_model(text)
    assert consts == {"s.x.0": 3, "l.x.0": -2, "flag": False}
    assert funcs["Y"]((1,)) == 7 and funcs["Y"]((0,)) == -1


def test_script_round_trips_through_solver():
    x, y = T.sym("x"), T.sym("y")
    assert smt.check(T.and_(T.ge(x, y), T.ge(y, x)), T.eq(x, y)).status == "unsat"
    res = smt.check(T.ge(x, T.lit(0)), T.ge(x, T.lit(1)))
    assert res.status == "sat" and smt.model_value(res, "x") == 0


def test_divmod_lemmas_close_nonlinear_goal():
    x, y, d = T.sym("x"), T.sym("y"), T.sym("d")
    goal = T.eq(T.mod(T.add(T.mul(x, d), y), d), T.mod(y, d))
    assume = T.and_(T.ge(d, T.lit(1)), *split.divmod_lemmas([goal]))
    assert smt.check(assume, goal).status == "unsat"
