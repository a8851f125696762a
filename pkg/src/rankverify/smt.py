"""SMT-LIB 2 lowering and an external-solver driver.

Tensors become uninterpreted functions from integer indices to their element
sort; every free symbol becomes a constant.  Closed subterms shared by more
than one parent are hoisted into ``define-fun`` so scripts stay linear in the
term DAG size.  The solver runs as a subprocess on a script file; its time
limit is passed on the command line so the script itself stays solver-neutral.
"""

from __future__ import annotations

import os
import re
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from . import terms as T
from .errors import ModelParseError, ResidualReduction, SolverSpawnError, UnsupportedTheory

SORTS = {T.INT: "Int", T.REAL: "Real", T.BOOL: "Bool"}
_SIMPLE = re.compile(r"^[A-Za-z~!@$%^&*_+=<>.?/-][A-Za-z0-9~!@$%^&*_+=<>.?/-]*$")
_RESERVED = {"true", "false", "let", "forall", "exists", "ite", "and", "or", "not", "div", "mod", "par", "as", "_", "!"}
SOLVER_ENV = "RANKVERIFY_SOLVER"


def quote(name):
    if _SIMPLE.match(name) and name not in _RESERVED and not name[0].isdigit():
        return name
    if "|" in name or "\\" in name:
        raise UnsupportedTheory(f"symbol {name!r} cannot be quoted")
    return f"|{name}|"


def _num(v, kind):
    if kind == T.INT:
        return str(v) if v >= 0 else f"(- {-v})"
    v = Fraction(v)
    n, d = v.numerator, v.denominator
    body = f"{abs(n)}.0" if d == 1 else f"(/ {abs(n)}.0 {d}.0)"
    return body if n >= 0 else f"(- {body})"


# ------------------------------------------------------------------ lowering

class Lowering:
    """Lowers a family of terms sharing one hoisting table."""

    def __init__(self):
        self.consts = {}  # name -> sort
        self.funcs = {}  # tensor -> (arg count, sort)
        self.defs = []  # (name, sort, text) in dependency order
        self._names = {}
        self._text = {}

    def declare_term(self, t):
        for n in T.walk(t):
            if n.op == "red":
                raise ResidualReduction("reduction element reached the SMT encoder")
            if n.op == "read":
                sig = (len(n.args), SORTS[n.kind])
                prev = self.funcs.setdefault(n.val, sig)
                if prev != sig:
                    raise UnsupportedTheory(f"tensor {n.val} used with two signatures")
        for s in T.free_symbols(t):
            self.consts[s.val] = SORTS[s.kind]

    def lower_all(self, roots):
        """Text for each root; shared closed subterms become definitions."""
        for r in roots:
            self.declare_term(r)
        parents = {}
        order = []
        seen = set()
        for r in roots:
            for n in _outer_walk(r):
                if n not in seen:
                    seen.add(n)
                    order.append(n)
                for a in _outer_children(n):
                    parents[a] = parents.get(a, 0) + 1
        for r in roots:
            parents[r] = parents.get(r, 0) + 1
        for n in order:
            if n.op in ("lit", "sym") or n in self._names:
                continue
            if parents.get(n, 0) > 1 and n.op not in ("not",):
                text = self._render(n)
                name = f"_d{len(self.defs)}"
                self.defs.append((name, SORTS[n.kind], text))
                self._names[n] = name
        return [self.lower(r) for r in roots]

    def lower(self, t):
        if t in self._names:
            return self._names[t]
        return self._render(t)

    def _render(self, t, bound=frozenset()):
        hit = self._text.get((t, bound))
        if hit is not None:
            return hit
        out = self._render_uncached(t, bound)
        self._text[(t, bound)] = out
        return out

    def _child(self, t, bound):
        if t in self._names and not (T.free_symbols(t) & bound):
            return self._names[t]
        return self._render(t, bound)

    def _render_uncached(self, t, bound):
        op = t.op
        c = lambda x: self._child(x, bound)
        if op == "lit":
            if t.kind == T.BOOL:
                return "true" if t.val else "false"
            return _num(t.val, t.kind)
        if op == "sym":
            return quote(t.val)
        if op == "add":
            return f"(+ {' '.join(c(a) for a in t.args)})"
        if op == "mul":
            return f"(* {' '.join(c(a) for a in t.args)})"
        if op in ("div", "mod"):
            return f"({op} {c(t.args[0])} {c(t.args[1])})"
        if op in ("min", "max"):
            a, b = c(t.args[0]), c(t.args[1])
            cmp = "<=" if op == "min" else ">="
            return f"(ite ({cmp} {a} {b}) {a} {b})"
        if op == "ge":
            return f"(>= {c(t.args[0])} {c(t.args[1])})"
        if op == "gt":
            return f"(> {c(t.args[0])} {c(t.args[1])})"
        if op == "eq":
            return f"(= {c(t.args[0])} {c(t.args[1])})"
        if op in ("and", "or"):
            return f"({op} {' '.join(c(a) for a in t.args)})"
        if op == "not":
            return f"(not {c(t.args[0])})"
        if op == "ite":
            return f"(ite {c(t.args[0])} {c(t.args[1])} {c(t.args[2])})"
        if op == "read":
            if not t.args:
                return quote(t.val)
            return f"({quote(t.val)} {' '.join(c(a) for a in t.args)})"
        if op in ("all", "any"):
            _, syms, sizes, body = T.binder_parts(t)
            inner = bound | frozenset(syms)
            decls = " ".join(f"({quote(s.val)} {SORTS[s.kind]})" for s in syms)
            rng = " ".join(f"(<= 0 {quote(s.val)}) (< {quote(s.val)} {c(z)})" for s, z in zip(syms, sizes))
            b = self._render(body, inner)
            if op == "all":
                return f"(forall ({decls}) (=> (and {rng}) {b}))"
            return f"(exists ({decls}) (and {rng} {b}))"
        if op == "red":
            raise ResidualReduction("reduction element reached the SMT encoder")
        raise UnsupportedTheory(f"no SMT encoding for {op}")


def _outer_children(n):
    """Children that live in the same scope as ``n`` (binder bodies excluded)."""
    if n.op in ("all", "any"):
        _, _, sizes, _ = T.binder_parts(n)
        return list(sizes)
    return list(n.args)


def _outer_walk(root):
    seen = set()
    out = []
    stack = [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            out.append(t)
            continue
        if t in seen:
            continue
        seen.add(t)
        stack.append((t, True))
        for a in reversed(_outer_children(t)):
            if a not in seen:
                stack.append((a, False))
    return out


def lower(term):
    """Standalone SMT-LIB text of one term (no hoisting)."""
    lw = Lowering()
    lw.declare_term(term)
    return lw._render(term)


# ------------------------------------------------------------------ scripts

def build_script(assumptions, goal, header=""):
    """Script asserting ``assumptions`` and the negated ``goal``; unsat means proven."""
    lw = Lowering()
    a_txt, g_txt = lw.lower_all([assumptions, goal])
    lines = []
    for h in header.splitlines():
        lines.append(f"; {h}" if h else ";")
    lines.append("(set-logic ALL)")
    lines.append("(set-option :produce-models true)")
    for name in sorted(lw.consts):
        lines.append(f"(declare-fun {quote(name)} () {lw.consts[name]})")
    for name in sorted(lw.funcs):
        n, sort = lw.funcs[name]
        lines.append(f"(declare-fun {quote(name)} ({' '.join(['Int'] * n)}) {sort})")
    for name, sort, text in lw.defs:
        lines.append(f"(define-fun {name} () {sort} {text})")
    lines.append(f"(assert {a_txt})")
    lines.append(f"(assert (not {g_txt}))")
    lines.append("(check-sat)")
    lines.append("(get-model)")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ solving

@dataclass
class SolverConfig:
    solver: Optional[str] = None  # name or path; falls back to $RANKVERIFY_SOLVER, then z3
    timeout_ms: int = 10000

    def command(self, path):
        exe = self.solver or os.environ.get(SOLVER_ENV) or "z3"
        resolved = shutil.which(exe) or (exe if os.path.exists(exe) else None)
        if resolved is None:
            raise SolverSpawnError(f"solver not found: {exe}")
        if "cvc5" in os.path.basename(resolved):
            return [resolved, "--lang=smt2", "--produce-models", f"--tlimit-per={self.timeout_ms}", path]
        return [resolved, "-smt2", f"-t:{self.timeout_ms}", path]


@dataclass
class SolverResult:
    status: str  # unsat | sat | unknown | timeout | solver-error
    model: dict = field(default_factory=dict)
    functions: dict = field(default_factory=dict)
    raw: str = ""
    seconds: float = 0.0

    @property
    def proven(self):
        return self.status == "unsat"


def run_script(script, config=None):
    config = config or SolverConfig()
    fd, path = tempfile.mkstemp(suffix=".smt2", prefix="rankverify-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(script)
        return run_file(path, config)
    finally:
        os.unlink(path)


def run_file(path, config=None):
    config = config or SolverConfig()
    cmd = config.command(str(path))
    start = time.monotonic()
    hard = config.timeout_ms / 1000.0 * 2 + 5
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True, timeout=hard)
    except subprocess.TimeoutExpired:
        return SolverResult("timeout", seconds=time.monotonic() - start)
    except OSError as exc:
        raise SolverSpawnError(f"cannot run {cmd[0]}: {exc.strerror}") from None
    elapsed = time.monotonic() - start
    out = proc.stdout
    first = out.strip().split("\n", 1)[0].strip() if out.strip() else ""
    if first == "unsat":
        return SolverResult("unsat", raw=out, seconds=elapsed)
    if first == "sat":
        consts, funcs = parse_model(out.split("\n", 1)[1] if "\n" in out else "")
        return SolverResult("sat", consts, funcs, raw=out, seconds=elapsed)
    if first in ("unknown", "timeout"):
        return SolverResult("timeout" if "timeout" in out or "canceled" in out else "unknown",
                            raw=out, seconds=elapsed)
    return SolverResult("solver-error", raw=out + proc.stderr, seconds=elapsed)


def check(assumptions, goal, config=None, header=""):
    """Prove ``assumptions => goal``; returns the solver's verdict on the negation."""
    return run_script(build_script(assumptions, goal, header), config)


# ------------------------------------------------------------------ models

_TOKEN = re.compile(r"\(|\)|\|[^|]*\||\"(?:[^\"]|\"\")*\"|;[^\n]*|[^\s()|\";]+")


def parse_sexprs(text):
    stack = [[]]
    for m in _TOKEN.finditer(text):
        tok = m.group(0)
        if tok.startswith(";"):
            continue
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if len(stack) == 1:
                raise ModelParseError("unbalanced ')' in solver output")
            done = stack.pop()
            stack[-1].append(done)
        else:
            stack[-1].append(tok[1:-1] if tok.startswith("|") else _Atom(tok))
    if len(stack) != 1:
        raise ModelParseError("unbalanced '(' in solver output")
    return stack[0]


class _Atom(str):
    """Unquoted token (distinguishes ``|1|`` the symbol from ``1`` the numeral)."""


class FuncInterp:
    """A model's interpretation of an uninterpreted function, evaluable on any point."""

    def __init__(self, name, params, body, env):
        self.name = name
        self.params = params
        self.body = body
        self.env = env

    def __call__(self, args):
        scope = dict(zip(self.params, args))
        return _eval_sexpr(self.body, scope, self.env)


_HOISTED = re.compile(r"_d\d+")


def parse_model(text):
    """Constants and function interpretations from ``(get-model)`` output."""
    items = parse_sexprs(text)
    defs = []
    for it in items:
        if isinstance(it, list):
            if it and it[0] == "model":
                it = it[1:]
            if it and isinstance(it[0], list):
                defs.extend(d for d in it if isinstance(d, list) and d and d[0] == "define-fun")
            elif it and it[0] == "define-fun":
                defs.append(it)
            elif it and it[0] == "error":
                continue
    env = {}
    consts = {}
    funcs = {}
    for d in defs:
        if len(d) != 5:
            raise ModelParseError(f"unexpected define-fun form: {d!r}")
        _, name, params, _sort, body = d
        names = [p[0] for p in params]
        env[str(name)] = (names, body)
    for name, (params, body) in env.items():
        if _HOISTED.fullmatch(name):
            continue  # our own shared-subterm macros, echoed back by some solvers
        if params:
            funcs[name] = FuncInterp(name, params, body, env)
        else:
            try:
                consts[name] = _eval_sexpr(body, {}, env)
            except ModelParseError:
                raise
            except Exception as exc:  # solver-specific forms we do not model
                raise ModelParseError(f"cannot evaluate model value of {name}: {exc}") from None
    return consts, funcs


def _lit_value(tok):
    if tok == "true":
        return True
    if tok == "false":
        return False
    if re.fullmatch(r"\d+", tok):
        return int(tok)
    if re.fullmatch(r"\d+\.\d*", tok):
        return Fraction(tok)
    return None


def _eval_sexpr(e, scope, env):
    if not isinstance(e, list):
        if isinstance(e, _Atom):
            v = _lit_value(e)
            if v is not None:
                return v
        name = str(e)
        if name in scope:
            return scope[name]
        if name in env and not env[name][0]:
            return _eval_sexpr(env[name][1], {}, env)
        raise ModelParseError(f"unknown name {name!r} in model")
    if not e:
        raise ModelParseError("empty application in model")
    head = e[0]
    if isinstance(head, list):
        if head and head[0] == "_" and len(head) == 3 and head[1] == "as-array":
            raise ModelParseError("array-valued models are not supported")
        raise ModelParseError(f"unsupported head {head!r}")
    head = str(head)
    if head == "let":
        inner = dict(scope)
        for binding in e[1]:
            inner[str(binding[0])] = _eval_sexpr(binding[1], scope, env)
        return _eval_sexpr(e[2], inner, env)
    if head == "ite":
        return _eval_sexpr(e[2] if _eval_sexpr(e[1], scope, env) else e[3], scope, env)
    if head in ("forall", "exists", "lambda"):
        raise ModelParseError(f"quantified model term ({head})")
    args = [_eval_sexpr(a, scope, env) for a in e[1:]]
    if head == "-":
        return -args[0] if len(args) == 1 else args[0] - sum(args[1:])
    if head == "+":
        return sum(args[1:], args[0])
    if head == "*":
        out = args[0]
        for a in args[1:]:
            out = out * a
        return out
    if head == "/":
        out = Fraction(args[0])
        for a in args[1:]:
            out = out / Fraction(a)
        return out
    if head == "div":
        return T.ediv(args[0], args[1])
    if head == "mod":
        return T.emod(args[0], args[1])
    if head == "abs":
        return abs(args[0])
    if head == "to_real":
        return Fraction(args[0])
    if head == "to_int":
        return int(Fraction(args[0]).__floor__())
    if head == "and":
        return all(args)
    if head == "or":
        return any(args)
    if head == "not":
        return not args[0]
    if head == "=>":
        return (not args[0]) or args[1]
    if head == "xor":
        return bool(args[0]) != bool(args[1])
    if head == "=":
        return all(a == args[0] for a in args[1:])
    if head == "distinct":
        return len(set(args)) == len(args)
    if head in ("<", "<=", ">", ">="):
        fn = {"<": lambda a, b: a < b, "<=": lambda a, b: a <= b,
              ">": lambda a, b: a > b, ">=": lambda a, b: a >= b}[head]
        return all(fn(a, b) for a, b in zip(args, args[1:]))
    if head in env:
        params, body = env[head]
        return _eval_sexpr(body, dict(zip(params, args)), env)
    raise ModelParseError(f"unsupported model operator {head!r}")


def model_value(result, name, kind=T.INT):
    """Value of constant ``name``; solvers may omit irrelevant ones (default 0)."""
    if name in result.model:
        v = result.model[name]
        return bool(v) if kind == T.BOOL else (int(v) if kind == T.INT else Fraction(v))
    return False if kind == T.BOOL else 0


def tensor_fn(result, name, kind=T.INT):
    fn = result.functions.get(name)
    if fn is None:
        if name in result.model:  # rank-0 tensor declared as a constant
            v = result.model[name]
            return lambda idx: v
        default = False if kind == T.BOOL else 0
        return lambda idx: default
    return fn


def evaluate_under_model(term, result, kinds=None):
    """Evaluate ``term`` with every free symbol and tensor read taken from ``result``."""
    syms = {}
    for s in T.free_symbols(term):
        syms[s.val] = model_value(result, s.val, s.kind)
    tensors = {}
    for n in T.walk(term):
        if n.op == "read" and n.val not in tensors:
            tensors[n.val] = tensor_fn(result, n.val, n.kind)
    return T.evaluate(term, syms, tensors)
