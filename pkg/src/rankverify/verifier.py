"""Bounded verification of a rule across its inferred rank tasks.

Every task instantiates the rule at one rank tuple, evaluates both sides
symbolically and asks the solver four questions: do the shapes agree, does
every in-range LHS access stay in range on the RHS, is the RHS valid, and do
the values agree at a symbolic access.  Reductions are first replaced by
opaque tokens, either because both sides contain the same reduction or
because a user hint relates their index spaces bijectively.
"""

from __future__ import annotations

import itertools
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from . import analysis
from . import concrete
from . import instantiate as inst_mod
from . import smt
from . import split
from . import symeval
from . import terms as T
from .errors import (AxesMismatch, DomainMismatch, EvaluationTooLarge, KindMismatch, ModelParseError, NonSingletonAxis,
                     ResidualReduction, SamplingExhausted, UnsupportedOp, UnsupportedTheory, ValidityViolation)

STRUCTURAL = (AxesMismatch, DomainMismatch, KindMismatch, NonSingletonAxis, UnsupportedOp)
RANK_ORDER = {"Skipped": -1, "Verified": 0, "Unknown": 1, "Unsupported": 2, "Invalid": 3}
OBLIGATIONS = ("shape", "access", "rhs-valid", "value")
MAX_REPLAY_POINTS = 200_000
ORACLE_SEARCH_TRIALS = 300

# canonical script text -> status, for split pieces that are renamings of each other
_PIECE_CACHE = {}
_PIECE_LOCK = threading.Lock()


@dataclass
class VerifyConfig:
    solver: Optional[str] = None
    timeout_ms: int = 10000
    jobs: int = 1
    dump_dir: Optional[str] = None
    rank_override: dict = field(default_factory=dict)
    alias: dict = field(default_factory=dict)  # tensor -> representative
    oracle_check: bool = False
    seed: int = 0
    small_model: int = 8
    keep_going: bool = False  # run remaining tasks after a confirmed counterexample

    def solver_config(self):
        return smt.SolverConfig(self.solver, self.timeout_ms)


def _json_num(v):
    if isinstance(v, bool):
        return v
    if isinstance(v, Fraction):
        return int(v) if v.denominator == 1 else str(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    return v


@dataclass
class ObligationResult:
    name: str
    status: str  # unsat | sat | unknown | timeout | solver-error | skipped
    seconds: float = 0.0
    note: str = ""

    def to_json(self):
        return {"name": self.name, "status": self.status, "seconds": self.seconds, "note": self.note}

    @classmethod
    def from_json(cls, d):
        return cls(d["name"], d["status"], d["seconds"], d["note"])


@dataclass
class Counterexample:
    ranks: dict
    obligation: str
    model: dict  # symbol -> int / "p/q" / bool
    tensors: dict  # tensor -> {"axes", "sizes", "data"}
    access: Optional[dict]
    lhs_value: object = None
    rhs_value: object = None
    reason: str = "value"  # value | rhs-invalid | shape | structural
    confirmed: bool = False
    note: str = ""

    def to_json(self):
        return {"ranks": dict(self.ranks), "obligation": self.obligation, "model": dict(self.model),
                "tensors": dict(self.tensors), "access": None if self.access is None else dict(self.access),
                "lhs_value": self.lhs_value, "rhs_value": self.rhs_value, "reason": self.reason,
                "confirmed": self.confirmed, "note": self.note}

    @classmethod
    def from_json(cls, d):
        return cls(dict(d["ranks"]), d["obligation"], dict(d["model"]), dict(d["tensors"]),
                   None if d["access"] is None else dict(d["access"]), d["lhs_value"], d["rhs_value"],
                   d["reason"], d["confirmed"], d["note"])


@dataclass
class TaskResult:
    ranks: dict
    status: str  # Verified | Invalid | Unknown | Unsupported
    reason: str = ""
    obligations: list = field(default_factory=list)
    counterexample: Optional[Counterexample] = None
    seconds: float = 0.0

    def to_json(self):
        return {"ranks": dict(self.ranks), "status": self.status, "reason": self.reason,
                "obligations": [o.to_json() for o in self.obligations],
                "counterexample": self.counterexample.to_json() if self.counterexample else None,
                "seconds": self.seconds}

    @classmethod
    def from_json(cls, d):
        cex = d["counterexample"]
        return cls(dict(d["ranks"]), d["status"], d["reason"],
                   [ObligationResult.from_json(o) for o in d["obligations"]],
                   Counterexample.from_json(cex) if cex else None, d["seconds"])


@dataclass
class Verdict:
    rule: str
    overall: str
    reason: str = ""
    bounds: dict = field(default_factory=dict)  # rclass -> BoundReport
    ranks_used: dict = field(default_factory=dict)
    conclusive: bool = True
    tasks: list = field(default_factory=list)
    counterexample: Optional[Counterexample] = None
    oracle: list = field(default_factory=list)  # differential reports (json)
    seconds: float = 0.0
    path: str = ""

    @property
    def task_count(self):
        return len(self.tasks)

    def to_json(self):
        return {
            "rule": self.rule,
            "path": self.path,
            "verdict": self.overall,
            "reason": self.reason,
            "conclusive": self.conclusive,
            "bounds": {c: b.to_json() for c, b in self.bounds.items()},
            "ranks_used": dict(self.ranks_used),
            "tasks": [t.to_json() for t in self.tasks],
            "counterexample": self.counterexample.to_json() if self.counterexample else None,
            "oracle": list(self.oracle),
            "seconds": self.seconds,
        }

    @classmethod
    def from_json(cls, d):
        cex = d["counterexample"]
        return cls(d["rule"], d["verdict"], d["reason"],
                   {c: analysis.BoundReport.from_json(b) for c, b in d["bounds"].items()},
                   dict(d["ranks_used"]), d["conclusive"], [TaskResult.from_json(t) for t in d["tasks"]],
                   Counterexample.from_json(cex) if cex else None, list(d["oracle"]), d["seconds"], d["path"])


class _Inconclusive(Exception):
    """A task cannot be decided; carries the reason reported as Unknown."""


class _HintFailed(_Inconclusive):
    """A hinted reduction pair could not be shown equal; the rule may be wrong."""

    def __init__(self, why, name=None, assume=None, goal=None, result=None):
        super().__init__(why)
        self.name, self.assume, self.goal, self.result = name, assume, goal, result


# ------------------------------------------------------------------ entry

def verify(rule, config=None, path=""):
    """Verify ``rule`` at every rank tuple up to its inferred bounds."""
    config = config or VerifyConfig()
    start = time.monotonic()
    bounds = analysis.bound_reports(rule, alias=config.alias)
    ranks_used = {c: b.bound for c, b in bounds.items()}
    conclusive = True
    for c, k in config.rank_override.items():
        if c not in ranks_used:
            continue
        if k < ranks_used[c]:
            conclusive = False
        ranks_used[c] = int(k)
    tasks = analysis.task_set(rule, ranks_used)
    jobs = max(1, int(config.jobs or 1))
    found = threading.Event()

    def one(item):
        i, ranks = item
        if found.is_set():
            return TaskResult(dict(ranks), "Skipped", "an earlier task already failed",
                              [ObligationResult(n, "skipped") for n in OBLIGATIONS])
        out = run_task(rule, ranks, config, i)
        if out.status == "Invalid" and not config.keep_going:
            found.set()
        return out

    if jobs > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(one, enumerate(tasks)))
    else:
        results = [one(item) for item in enumerate(tasks)]
    verdict = _aggregate(rule, results, bounds, ranks_used, conclusive)
    verdict.path = str(path)
    if config.oracle_check and verdict.overall == "Verified":
        _oracle_check(rule, verdict, tasks, config)
    verdict.seconds = time.monotonic() - start
    return verdict


def _aggregate(rule, results, bounds, ranks_used, conclusive):
    overall = "Verified"
    reason = ""
    cex = None
    for r in results:
        if RANK_ORDER[r.status] > RANK_ORDER[overall]:
            overall, reason = r.status, r.reason
            if r.status == "Invalid":
                cex = r.counterexample
    if overall != "Verified" and not conclusive:
        reason = (reason + "; " if reason else "") + "ranks below the inferred bound"
    elif overall == "Verified" and not conclusive:
        reason = "ranks below the inferred bound; not conclusive"
    return Verdict(rule.name, overall, reason, bounds, ranks_used, conclusive, results, cex)


def _oracle_check(rule, verdict, tasks, config):
    for ranks in tasks:
        try:
            rep = concrete.differential_test(rule, ranks, trials=200, seed=config.seed)
        except SamplingExhausted as exc:
            verdict.oracle.append({"ranks": dict(ranks), "error": str(exc)})
            continue
        verdict.oracle.append(rep.to_json())
        if rep.mismatches:
            verdict.overall = "Unknown"
            verdict.reason = f"oracle disagrees with proof at ranks {ranks}"


def task_name(ranks):
    return ",".join(f"{c}={k}" for c, k in ranks.items())


# ------------------------------------------------------------------ tasks

class _Task:
    def __init__(self, rule, ranks, config, index):
        self.rule = rule
        self.ranks = dict(ranks)
        self.config = config
        self.ir = inst_mod.instantiate(rule, ranks, f"t{index}")
        self.inst = self.ir.inst
        self.results = []
        self.solver = config.solver_config()

    def dump_path(self, obligation):
        if not self.config.dump_dir:
            return None
        d = os.path.join(self.config.dump_dir, self.rule.name, task_name(self.ranks))
        os.makedirs(d, exist_ok=True)
        return os.path.join(d, f"{obligation}.smt2")

    def _header(self, name):
        return f"rule {self.rule.name}\ntask {task_name(self.ranks)}\nobligation {name}"

    def check(self, name, assumptions, goal, record=True):
        assumptions = T.and_(assumptions, *split.divmod_lemmas([assumptions, goal]))
        script = smt.build_script(assumptions, goal, self._header(name))
        path = self.dump_path(name)
        if path:
            with open(path, "w") as fh:
                fh.write(script)
        res = smt.run_script(script, self.solver)
        if record:
            self.results.append(ObligationResult(name, res.status, res.seconds))
        return res

    def check_split(self, name, assumptions, lhs, rhs):
        """Try to prove ``lhs == rhs`` piecewise; True when every piece is unsat."""
        pieces = split.split_eq(lhs, rhs)
        if len(pieces) <= 1 and pieces and pieces[0][1] is T.eq(lhs, rhs):
            return False
        start = time.monotonic()
        hits = 0
        for k, (guards, goal) in enumerate(pieces):
            assume = T.and_(assumptions, *guards)
            assume = split.relevant(T.and_(assume, *split.divmod_lemmas([assume, goal])), goal)
            c_assume, c_goal = split.canonical(self.inst, [assume, goal])
            body = smt.build_script(c_assume, c_goal)
            key = (self.solver.solver, self.solver.timeout_ms, body)
            path = self.dump_path(f"{name}.part{k}")
            if path:
                with open(path, "w") as fh:
                    fh.write(smt.build_script(c_assume, c_goal, self._header(f"{name}.part{k}")))
            with _PIECE_LOCK:
                status = _PIECE_CACHE.get(key)
            if status is None:
                status = smt.run_script(body, self.solver).status
                if status in ("sat", "unsat"):
                    with _PIECE_LOCK:
                        _PIECE_CACHE[key] = status
            else:
                hits += 1
            if status != "unsat":
                return False
        note = f"proved in {len(pieces)} pieces ({hits} reused)"
        self.results.append(ObligationResult(name, "unsat", time.monotonic() - start, note))
        return True

    def alias(self, t):
        if not self.config.alias:
            return t
        mapping = {}
        for n in T.walk(t):
            if n.op == "read" and n.val in self.config.alias:
                mapping[n] = T.read(self.config.alias[n.val], n.args, n.kind)
        return T.substitute(t, mapping) if mapping else t


def run_task(rule, ranks, config, index=0):
    start = time.monotonic()
    task = _Task(rule, ranks, config, index)
    try:
        out = _run(task)
    except _HintFailed as exc:
        out = _oracle_search(task, str(exc))
    except _Inconclusive as exc:
        out = TaskResult(task.ranks, "Unknown", str(exc))
    except (ResidualReduction, UnsupportedTheory) as exc:
        out = TaskResult(task.ranks, "Unknown", f"{type(exc).__name__}: {exc}")
    done = {o.name for o in task.results}
    out.obligations = task.results + [ObligationResult(n, "skipped") for n in OBLIGATIONS if n not in done]
    out.seconds = time.monotonic() - start
    return out


def _run(task):
    ir_, inst = task.ir, task.inst
    try:
        lt, lv = symeval.sym_eval(ir_.lhs, ir_.env, inst.fresh)
    except STRUCTURAL as exc:
        return TaskResult(task.ranks, "Unsupported", f"left side: {type(exc).__name__}: {exc}")
    try:
        rt, rv = symeval.sym_eval(ir_.rhs, ir_.env, inst.fresh)
    except STRUCTURAL as exc:
        return _structural(task, f"right side: {type(exc).__name__}: {exc}")
    if set(lt.axes) != set(rt.axes):
        return _structural(task, f"output axes {sorted(lt.axes)} vs {sorted(rt.axes)}")
    if lt.elem != rt.elem:
        return _structural(task, f"element kinds {lt.elem} vs {rt.elem}")

    pre = task.alias(ir_.pre)
    lv, rv = task.alias(lv), task.alias(rv)
    access = {a: inst.fresh("acc", a, "access") for a in lt.axes}
    lacc = T.and_(*(T.and_(T.ge(access[a], T.lit(0)), T.lt(access[a], lt.shape[a])) for a in lt.axes))
    racc = T.and_(*(T.and_(T.ge(access[a], T.lit(0)), T.lt(access[a], rt.shape[a])) for a in lt.axes))
    base = T.and_(pre, lv)
    ctx = _Context(task, lt, rt, access)

    shapes = T.and_(*(T.eq(lt.shape[a], rt.shape[a]) for a in lt.axes))
    for name, assume, goal in (("shape", base, shapes),
                               ("access", T.and_(base, lacc), racc),
                               ("rhs-valid", base, rv)):
        res = task.check(name, assume, goal)
        verdict = _settle(ctx, name, assume, goal, res)
        if verdict is not None:
            return verdict

    vbase = T.and_(base, rv, lacc)
    lval = task.alias(lt.at(access))
    rval = task.alias(rt.at(access))
    try:
        lval, rval = discharge_reductions(task, lval, rval, vbase)
    except _HintFailed as exc:
        if exc.result is None or exc.result.status != "sat":
            raise
        # a pointwise mismatch of the summands often survives into the sums
        res = _smaller_model(ctx, exc.name, exc.assume, exc.goal, exc.result)
        try:
            cex = extract_counterexample(res, ctx, "value")
        except ModelParseError:
            raise exc from None
        if cex.confirmed:
            return TaskResult(task.ranks, "Invalid", "value obligation fails", counterexample=cex)
        raise
    goal = T.eq(lval, rval)
    res = task.check("value", vbase, goal, record=False)
    if res.status in ("unknown", "timeout") and task.check_split("value", vbase, lval, rval):
        return TaskResult(task.ranks, "Verified")
    task.results.append(ObligationResult("value", res.status, res.seconds))
    verdict = _settle(ctx, "value", vbase, goal, res)
    if verdict is not None:
        return verdict
    return TaskResult(task.ranks, "Verified")


def _oracle_search(task, why):
    """Look for a concrete mismatch once the symbolic route has stalled on a reduction."""
    try:
        rep = concrete.differential_test(task.rule, task.ranks, trials=ORACLE_SEARCH_TRIALS,
                                         seed=task.config.seed)
    except SamplingExhausted:
        return TaskResult(task.ranks, "Unknown", why)
    if rep.first is None:
        return TaskResult(task.ranks, "Unknown", why)
    mm = rep.first
    cex = Counterexample(task.ranks, "value", {k: _json_num(v) for k, v in sorted(mm.model.items())},
                         {k: v.to_json() for k, v in sorted(mm.tensors.items())},
                         None if mm.access is None else {a: int(v) for a, v in mm.access.items()},
                         _json_num(mm.lhs_value), _json_num(mm.rhs_value),
                         "value" if mm.reason == "value" else ("shape" if mm.reason == "shape" else "rhs-invalid"),
                         True, f"found by oracle search after {why}")
    return TaskResult(task.ranks, "Invalid", "value obligation fails", counterexample=cex)


def _structural(task, why):
    cex = Counterexample(task.ranks, "structural", {}, {}, None, reason="structural", confirmed=True, note=why)
    return TaskResult(task.ranks, "Invalid", f"structural: {why}", counterexample=cex)


@dataclass
class _Context:
    task: _Task
    lt: symeval.SymTensor
    rt: symeval.SymTensor
    access: dict


def _settle(ctx, name, assume, goal, res):
    """None when the obligation holds; otherwise the task's final result."""
    if res.status == "unsat":
        return None
    if res.status == "sat":
        res = _smaller_model(ctx, name, assume, goal, res)
        try:
            cex = extract_counterexample(res, ctx, name)
        except ModelParseError as exc:
            return TaskResult(ctx.task.ranks, "Unknown", f"unreadable model: {exc}")
        if cex.confirmed:
            return TaskResult(ctx.task.ranks, "Invalid", f"{name} obligation fails", counterexample=cex)
        return TaskResult(ctx.task.ranks, "Unknown", f"suspect counterexample: {cex.note}", counterexample=cex)
    return TaskResult(ctx.task.ranks, "Unknown", f"{name}: solver returned {res.status}")


def _smaller_model(ctx, name, assume, goal, res):
    """Re-ask with every integer symbol boxed in; keeps the original model on failure."""
    for k in sorted({min(2, ctx.task.config.small_model), ctx.task.config.small_model}):
        if k:
            small = _boxed(ctx, assume, goal, k)
            if small.status == "sat":
                return small
    return res


def _boxed(ctx, assume, goal, k):
    box = []
    query = T.and_(assume, T.not_(goal))
    for s in sorted(T.free_symbols(query), key=lambda s: s.val):
        if s.kind == T.INT:
            box.append(T.ge(s, T.lit(-k)))
            box.append(T.le(s, T.lit(k)))
    for n in T.scope_walk(query):
        if n.op == "read" and n.kind == T.INT and not (T.free_symbols(n) - T.free_symbols(query)):
            box.append(T.ge(n, T.lit(-k)))
            box.append(T.le(n, T.lit(k)))
    return smt.run_script(smt.build_script(T.and_(assume, *box), goal), ctx.task.solver)


# ------------------------------------------------------------------ replay

def extract_counterexample(res, ctx, obligation):
    """Read a sat model back into concrete tensors and replay it through the oracle."""
    task = ctx.task
    ir_, inst = task.ir, task.inst
    model = {}
    for name, info in sorted(inst.info.items()):
        if info.role in ("size", "attr"):
            model[name] = smt.model_value(res, name, T.INT)
    access = {a: smt.model_value(res, s.val) for a, s in ctx.access.items()}
    alias = task.config.alias
    env = {}
    fns = {}
    note = ""
    for tname, sig in sorted(ir_.env.items()):
        fn = smt.tensor_fn(res, alias.get(tname, tname), sig.elem)
        fns[tname] = fn
        try:
            sizes = [T.evaluate(sig.shape[a], model) for a in sig.axes]
        except T.EvalError as exc:
            return _suspect(task, obligation, model, {}, access, f"shape of {tname}: {exc}")
        if any(n < 0 for n in sizes):
            return _suspect(task, obligation, model, {}, access, f"negative size for {tname}")
        if int(np.prod(sizes, dtype=object)) > MAX_REPLAY_POINTS:
            return _suspect(task, obligation, model, {}, access, f"{tname} too large to replay")
        data = np.empty(sizes, dtype=object)
        for idx in np.ndindex(*sizes):
            data[idx] = concrete._cast(fn(tuple(idx)), sig.elem)
        env[tname] = concrete.ConcreteTensor(sig.axes, data, sig.elem)
    tensors_json = {n: t.to_json() for n, t in env.items()}
    model_json = {k: _json_num(v) for k, v in model.items()}
    access_json = {a: int(v) for a, v in access.items()}

    def cex(reason, confirmed, lhs_value=None, rhs_value=None, at=None, why=""):
        return Counterexample(task.ranks, obligation, model_json, tensors_json,
                              at if at is not None else access_json,
                              _json_num(lhs_value), _json_num(rhs_value), reason, confirmed, why)

    try:
        left = concrete.eval_concrete(ir_.lhs, env, model)
    except ValidityViolation as exc:
        return cex("value", False, why=f"left side invalid under the model: {exc}")
    except EvaluationTooLarge as exc:
        return cex("value", False, why=f"too large to replay: {exc}")
    try:
        right = concrete.eval_concrete(ir_.rhs, env, model)
    except ValidityViolation as exc:
        return cex("rhs-invalid", True, why=f"right side invalid: {exc}")
    except EvaluationTooLarge as exc:
        return cex("value", False, why=f"too large to replay: {exc}")
    if left.sizes != right.sizes:
        return cex("shape", True, why=f"shapes {left.sizes} vs {right.sizes}")
    in_range = all(0 <= access[a] < n for a, n in left.sizes.items())
    if in_range and left.at(access) != right.at(access):
        return cex("value", True, left.at(access), right.at(access))
    for point in left.points():
        if left.at(point) != right.at(point):
            return cex("value", True, left.at(point), right.at(point), {a: int(v) for a, v in point.items()},
                       "oracle mismatch away from the solver's access")
    note = "oracle replay found no difference"
    return cex("value", False, why=note)


def _suspect(task, obligation, model, tensors, access, why):
    return Counterexample(task.ranks, obligation, {k: _json_num(v) for k, v in model.items()}, tensors,
                          {a: int(v) for a, v in access.items()}, reason="value", confirmed=False, note=why)


# ------------------------------------------------------------ reductions

def _alpha(t):
    """Rename every bound index positionally so alpha-equivalent terms are identical."""
    counter = itertools.count()
    memo = {}

    def go(n, env):
        key = (n, env)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if n.op == "sym":
            out = dict(env).get(n, n)
        elif n.op in T.BINDERS:
            syms, sizes, body = T.bound_parts(n)
            sizes = [go(z, env) for z in sizes]
            fresh = [T.sym(f"%{next(counter)}", s.kind) for s in syms]
            scope = dict(env)
            scope.update(zip(syms, fresh))
            inner = tuple(sorted(scope.items(), key=lambda kv: kv[0].val))
            body = go(body, inner)
            pairs = list(zip(fresh, sizes))
            if n.op == "red":
                out = T.red(n.val[0], pairs, body)
            else:
                out = T._binder(n.op, pairs, body)
        elif not n.args:
            out = n
        else:
            out = T.rebuild(n, [go(a, env) for a in n.args])
        memo[key] = out
        return out

    return go(t, ())


def _has_red(t):
    return T.contains(t, lambda n: n.op == "red")


def _maximal_reds(t):
    out = []
    seen = set()
    stack = [t]
    while stack:
        n = stack.pop()
        if n in seen:
            continue
        seen.add(n)
        if n.op == "red":
            out.append(n)
            continue
        stack.extend(n.args)
    return out


@dataclass
class _Clause:
    guard: T.Term
    syms: list
    sizes: list
    body: T.Term


def discharge_reductions(task, lhs, rhs, assumptions):
    """Replace reduction elements on both sides by tokens once they are proven equal.

    Returns the rewritten ``(lhs, rhs)`` pair.  Raises :class:`_Inconclusive`
    when a reduction cannot be matched or a hint obligation is not proven.
    """
    if not (_has_red(lhs) or _has_red(rhs)):
        return lhs, rhs
    inst = task.inst

    def fresh_name(v):
        info = inst.info.get(v)
        if info is None:
            return inst.fresh(v, None, "index").val
        return inst.fresh(info.base, info.named_axis, "index").val

    lhs = symeval.normalize_reductions(lhs, fresh_name)
    rhs = symeval.normalize_reductions(rhs, fresh_name)
    lhs, rhs = _tokenize_identical(task, lhs, rhs)
    if not (_has_red(lhs) or _has_red(rhs)):
        return lhs, rhs
    if not task.ir.hints:
        raise _Inconclusive("reduction without hint")
    lsum = _reduction_sum(lhs)
    rsum = _reduction_sum(rhs)
    if lsum is None or rsum is None:
        raise _Inconclusive("ambiguous reduction pairing")
    lop, rop = _sum_op(lsum), _sum_op(rsum)
    if lop is None or lop != rop:
        raise _Inconclusive("ambiguous reduction pairing")
    lcl = _clauses(lsum, lop, T.TRUE)
    rcl = _clauses(rsum, rop, T.TRUE)
    rcl = [_rename_clause(inst, c) for c in rcl]
    for c in lcl + rcl:
        if _has_red(c.body) or _has_red(c.guard) or any(_has_red(z) for z in c.sizes):
            raise _Inconclusive("nested reduction under a hinted reduction")
    rel = {}
    for i, a in enumerate(lcl):
        for j, b in enumerate(rcl):
            rel[i, j] = _relation(task, a, b)
    if not any(r is not T.FALSE for r in rel.values()):
        raise _Inconclusive("no hint relates the reduction indices")
    _prove_bijection(task, lcl, rcl, rel, assumptions)
    token = inst.fresh("red", None, "token", lsum.kind)
    return T.substitute(lhs, {lsum: token}), T.substitute(rhs, {rsum: token})


def _tokenize_identical(task, lhs, rhs):
    canon_l = {r: _alpha(r) for r in _maximal_reds(lhs)}
    canon_r = {r: _alpha(r) for r in _maximal_reds(rhs)}
    shared = set(canon_l.values()) & set(canon_r.values())
    if not shared:
        return lhs, rhs
    tokens = {}
    for c in sorted(shared, key=lambda t: t.sig):
        tokens[c] = task.inst.fresh("red", None, "token", c.kind)
    lmap = {r: tokens[c] for r, c in canon_l.items() if c in tokens}
    rmap = {r: tokens[c] for r, c in canon_r.items() if c in tokens}
    return T.substitute(lhs, lmap), T.substitute(rhs, rmap)


def _sum_op(t):
    if t.op == "red":
        return t.val[0]
    ops = {_sum_op(a) for a in _sum_children(t) if _has_red(a)}
    ops.discard(None)
    if t.op == "add":
        return "add" if ops <= {"add"} else None
    return ops.pop() if len(ops) == 1 else None


def _sum_children(t):
    if t.op == "ite":
        return t.args[1:]
    return t.args


def _is_sum(t):
    if t.op == "red":
        return True
    if t.op == "add":
        return all(_is_sum(a) or not _has_red(a) for a in t.args)
    if t.op == "ite":
        if _has_red(t.args[0]):
            return False
        return all(_is_sum(a) or _zero(a) for a in t.args[1:])
    return False


def _zero(t):
    return t.op == "lit" and t.val == 0


def _reduction_sum(t):
    """The unique maximal node of ``t`` that is a sum of reductions."""
    while True:
        if _is_sum(t) and _has_red(t):
            return t
        holders = [a for a in dict.fromkeys(t.args) if _has_red(a)]
        if len(holders) != 1:
            return None
        t = holders[0]


def _clauses(t, op, guard):
    if t.op == "red":
        _, syms, sizes, body = T.red_parts(t)
        return [_Clause(guard, list(syms), list(sizes), body)]
    if t.op == "add":
        out = []
        for a in t.args:
            if _has_red(a):
                out.extend(_clauses(a, op, guard))
            else:
                out.append(_Clause(guard, [], [], a))
        return out
    if t.op == "ite":
        c = t.args[0]
        out = []
        for g, branch in ((c, t.args[1]), (T.not_(c), t.args[2])):
            if op == "add" and _zero(branch):
                continue
            if not _has_red(branch):
                out.append(_Clause(T.and_(guard, g), [], [], branch))
            else:
                out.extend(_clauses(branch, op, T.and_(guard, g)))
        return out
    raise _Inconclusive("ambiguous reduction pairing")


def _rename_clause(inst, c):
    mapping = {}
    for s in c.syms:
        info = inst.info.get(s.val)
        base, ax = (info.base, info.named_axis) if info else (s.val, None)
        mapping[s] = inst.fresh(base, ax, "index", s.kind)
    return _Clause(T.substitute(c.guard, mapping), [mapping[s] for s in c.syms],
                   [T.substitute(z, mapping) for z in c.sizes], T.substitute(c.body, mapping))


def _bases(inst, c):
    return {inst.info[s.val].base for s in c.syms if s.val in inst.info}


def _origin(inst, s):
    info = inst.info[s.val]
    return inst.map_term(info.base, info.named_axis)


def _relation(task, a, b):
    inst = task.inst
    la, rb = _bases(inst, a), _bases(inst, b)
    for h in task.ir.hints:
        if set(h.lhs) == la and set(h.rhs) == rb:
            mapping = {_origin(inst, s): s for s in a.syms}
            mapping.update({_origin(inst, s): s for s in b.syms})
            rel = T.substitute(h.relation, mapping)
            stray = {s.val for s in T.free_symbols(rel)
                     if inst.info.get(s.val) is not None and inst.info[s.val].role == "index"
                     and s not in set(a.syms) | set(b.syms)}
            if stray:
                from .errors import HintReferencesUnknownIndex
                raise HintReferencesUnknownIndex(f"hint relation mentions {sorted(stray)}")
            return rel
    if la == rb and len(a.syms) == len(b.syms):
        by_key = {(inst.info[s.val].base, inst.info[s.val].named_axis): s for s in b.syms}
        parts = []
        for s in a.syms:
            key = (inst.info[s.val].base, inst.info[s.val].named_axis)
            if key not in by_key:
                return T.FALSE
            parts.append(T.eq(s, by_key[key]))
        return T.and_(*parts)
    return T.FALSE


def _dom(c):
    return T.and_(c.guard, *(T.and_(T.ge(s, T.lit(0)), T.lt(s, z)) for s, z in zip(c.syms, c.sizes)))


def _copy(inst, c):
    mapping = {s: inst.fresh(inst.info[s.val].base, inst.info[s.val].named_axis, "copy", s.kind) for s in c.syms}
    return _Clause(T.substitute(c.guard, mapping), [mapping[s] for s in c.syms],
                   [T.substitute(z, mapping) for z in c.sizes], T.substitute(c.body, mapping)), mapping


def _solve_for(y, atoms):
    """``y = term`` from a unit-coefficient equality among ``atoms``, or None."""
    for atom in atoms:
        if atom.op != "eq" or atom.args[0].kind != T.INT:
            continue
        poly = T._poly(T.sub(atom.args[0], atom.args[1]))
        coef = poly.get((y,))
        if coef not in (1, -1) or any(y in m for m in poly if m != (y,)):
            continue
        rest = {m: c for m, c in poly.items() if m != (y,)}
        value = T._from_poly(rest, T.INT)
        return T.neg(value) if coef == 1 else value
    return None


def _exists(clause, rel):
    """``exists y in dom(clause). rel``, with ``y`` eliminated wherever ``rel`` pins it down."""
    pairs = list(zip(clause.syms, clause.sizes))
    body = T.and_(clause.guard, rel)
    kept = []
    ranges = []
    for y, size in pairs:
        value = _solve_for(y, T.conjuncts(body))
        if value is None or y in T.free_symbols(value):
            kept.append((y, size))
            continue
        sub = {y: value}
        body = T.substitute(body, sub)
        kept = [(k, T.substitute(z, sub)) for k, z in kept]
        ranges = [T.substitute(g, sub) for g in ranges]
        pairs = [(k, T.substitute(z, sub)) for k, z in pairs]
        ranges.append(T.and_(T.ge(value, T.lit(0)), T.lt(value, T.substitute(size, sub))))
    return T.exists_in(kept, T.and_(*ranges, body)) if kept else T.and_(*ranges, body)


def _prove_bijection(task, lcl, rcl, rel, assumptions):
    inst = task.inst
    obligations = []
    for side, xs, ys, r in (("l2r", lcl, rcl, lambda i, j: rel[i, j]),
                            ("r2l", rcl, lcl, lambda i, j: rel[j, i])):
        for i, a in enumerate(xs):
            options = []
            for j, b in enumerate(ys):
                if r(i, j) is T.FALSE:
                    continue
                options.append(_exists(b, r(i, j)))
            obligations.append((f"red-total-{side}-{i}", T.and_(assumptions, _dom(a)), T.or_(*options)))
            for j, b in enumerate(ys):
                if r(i, j) is T.FALSE:
                    continue
                for k, b2 in enumerate(ys):
                    if k < j or r(i, k) is T.FALSE:
                        continue
                    c2, m2 = _copy(inst, b2)
                    rel2 = T.substitute(r(i, k), m2)
                    assume = T.and_(assumptions, _dom(a), _dom(b), _dom(c2), r(i, j), rel2)
                    goal = T.and_(*(T.eq(s, m2[s]) for s in b.syms)) if j == k else T.FALSE
                    obligations.append((f"red-unique-{side}-{i}-{j}-{k}", assume, goal))
    bodies = []
    for i, a in enumerate(lcl):
        for j, b in enumerate(rcl):
            if rel[i, j] is T.FALSE:
                continue
            sub = _pin(b.syms, rel[i, j])
            bb = T.substitute(b.body, sub) if sub else b.body
            assume = T.and_(assumptions, _dom(a), _dom(b), rel[i, j])
            if sub:
                assume = T.and_(assume, T.substitute(_dom(b), sub))
            bodies.append((f"red-body-{i}-{j}", assume, a.body, bb))
    for name, assume, goal in obligations:
        res = task.check(name, assume, goal)
        if res.status != "unsat":
            raise _Inconclusive(f"reduction obligation {name}: solver returned {res.status}")
    for name, assume, lb, rb in bodies:
        if task.check_split(name, assume, lb, rb):
            continue
        res = task.check(name, assume, T.eq(lb, rb))
        if res.status != "unsat":
            raise _HintFailed(f"reduction obligation {name}: solver returned {res.status}",
                              name, assume, T.eq(lb, rb), res)


def _pin(syms, rel):
    """Solutions ``y = term`` for ``syms`` read off unit equalities of ``rel``."""
    out = {}
    atoms = T.conjuncts(rel)
    for y in syms:
        atoms = [T.substitute(a, out) for a in atoms] if out else atoms
        value = _solve_for(y, atoms)
        if value is not None and y not in T.free_symbols(value):
            out = {k: T.substitute(v, {y: value}) for k, v in out.items()}
            out[y] = value
    return out
