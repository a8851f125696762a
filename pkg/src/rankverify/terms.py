"""Hash-consed scalar term DAG.

Every node is interned, so structural equality is object identity.  The
smart constructors fold constants and keep integer/real sums in a
canonical polynomial form (sorted monomials, merged coefficients), which
is what lets syntactically different spellings of the same index, such as
``(a - l2) - l1`` and ``a - (l1 + l2)``, collapse to one node.

Comparisons are normalised to ``p >= c``, ``p > c`` (reals only) and
``p = c`` where ``p`` has no constant part.
"""

from __future__ import annotations

import hashlib
import itertools
import threading
import weakref
from fractions import Fraction

INT = "int"
REAL = "real"
BOOL = "bool"
NUMERIC = (INT, REAL)

RED_OPS = ("add", "max", "min")


class Term:
    __slots__ = ("op", "kind", "val", "args", "sig", "_h", "_fs", "_pc", "__weakref__")

    def __hash__(self):
        return self._h

    def __eq__(self, other):
        return self is other

    def __repr__(self):
        return show(self)

    def __reduce__(self):
        raise TypeError("terms are process-local")

    # small conveniences for building index arithmetic in code
    def __add__(self, other):
        return add(self, _coerce(other, self.kind))

    def __radd__(self, other):
        return add(_coerce(other, self.kind), self)

    def __sub__(self, other):
        return sub(self, _coerce(other, self.kind))

    def __rsub__(self, other):
        return sub(_coerce(other, self.kind), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self.kind))

    def __rmul__(self, other):
        return mul(_coerce(other, self.kind), self)

    def __neg__(self):
        return neg(self)

    @property
    def is_lit(self):
        return self.op == "lit"


_table: "weakref.WeakValueDictionary" = weakref.WeakValueDictionary()
_lock = threading.Lock()


def _mk(op, kind, val, args=()):
    args = tuple(args)
    key = (op, kind, _valkey(val), tuple(id(a) for a in args))
    with _lock:
        hit = _table.get(key)
        if hit is not None:
            return hit
        t = Term()
        t.op = op
        t.kind = kind
        t.val = val
        t.args = args
        digest = hashlib.blake2b(digest_size=8)
        digest.update(repr((op, kind, _valkey(val))).encode())
        for a in args:
            digest.update(a.sig.to_bytes(8, "big"))
        t.sig = int.from_bytes(digest.digest(), "big")
        t._h = t.sig & 0x7FFFFFFFFFFFFFFF
        t._fs = None
        t._pc = None
        _table[key] = t
        return t


def _valkey(val):
    # keep 1, 1.0, True and Fraction(1) apart
    if isinstance(val, bool):
        return ("b", val)
    if isinstance(val, Fraction):
        return ("q", val.numerator, val.denominator)
    if isinstance(val, int):
        return ("i", val)
    return val


def _coerce(v, kind):
    if isinstance(v, Term):
        return v
    return lit(v, kind)


# ---------------------------------------------------------------- leaves

def lit(v, kind=None):
    if kind is None:
        if isinstance(v, bool):
            kind = BOOL
        elif isinstance(v, int):
            kind = INT
        else:
            kind = REAL
    if kind == BOOL:
        v = bool(v)
    elif kind == INT:
        if isinstance(v, bool) or int(v) != v:
            raise TypeError(f"not an integer literal: {v!r}")
        v = int(v)
    else:
        v = Fraction(v) if not isinstance(v, float) else Fraction(str(v))
    return _mk("lit", kind, v)


def sym(name, kind=INT):
    return _mk("sym", kind, str(name))


TRUE = lit(True)
FALSE = lit(False)


def zero(kind):
    return lit(0, kind)


# ------------------------------------------------------- polynomial core

def _okey(t):
    if t.op == "sym":
        return (0, t.val, 0)
    return (1, "", t.sig)


def _mono_key(m):
    return (len(m) == 0, tuple(_okey(a) for a in m))


def _poly(t):
    """Monomial -> coefficient map of ``t``; cached on the node, callers must not mutate it."""
    if t._pc is None:
        t._pc = _poly_uncached(t)
    return t._pc


def _poly_uncached(t):
    if t.op == "lit":
        return {(): t.val} if t.val != 0 else {}
    if t.op == "add":
        out = {}
        for a in t.args:
            _padd(out, _poly(a))
        return out
    if t.op == "mul":
        out = {(): 1}
        for a in t.args:
            out = _pmul(out, _poly(a))
        return out
    return {(t,): 1}


def _padd(acc, p, scale=1):
    for m, c in p.items():
        v = acc.get(m, 0) + c * scale
        if v == 0:
            acc.pop(m, None)
        else:
            acc[m] = v
    return acc


def _pmul(p, q):
    out = {}
    for (m1, c1), (m2, c2) in itertools.product(p.items(), q.items()):
        m = tuple(sorted(m1 + m2, key=_okey))
        v = out.get(m, 0) + c1 * c2
        if v == 0:
            out.pop(m, None)
        else:
            out[m] = v
    return out


def _from_poly(p, kind):
    items = sorted(((m, c) for m, c in p.items() if c != 0), key=lambda mc: _mono_key(mc[0]))
    if not items:
        return lit(0, kind)
    terms = []
    for m, c in items:
        if not m:
            terms.append(lit(c, kind))
            continue
        if c == 1 and len(m) == 1:
            terms.append(m[0])
            continue
        args = ([lit(c, kind)] if c != 1 else []) + list(m)
        terms.append(args[0] if len(args) == 1 else _mk("mul", kind, None, args))
    if len(terms) == 1:
        return terms[0]
    return _mk("add", kind, None, terms)


def _check_num(*xs):
    kinds = {x.kind for x in xs}
    if len(kinds) != 1 or next(iter(kinds)) not in NUMERIC:
        raise TypeError(f"arithmetic over incompatible kinds {sorted(kinds)}")
    return next(iter(kinds))


# ------------------------------------------------------------ arithmetic

def add(*xs):
    kind = _check_num(*xs)
    acc = {}
    for x in xs:
        _padd(acc, _poly(x))
    return _from_poly(acc, kind)


def sub(x, y):
    kind = _check_num(x, y)
    acc = _padd({}, _poly(x))
    _padd(acc, _poly(y), -1)
    return _from_poly(acc, kind)


def neg(x):
    kind = _check_num(x)
    return _from_poly(_padd({}, _poly(x), -1), kind)


def mul(*xs):
    kind = _check_num(*xs)
    acc = {(): 1}
    for x in xs:
        acc = _pmul(acc, _poly(x))
    return _from_poly(acc, kind)


def ediv(a, b):
    """SMT-LIB integer division: remainder is always nonnegative."""
    r = emod(a, b)
    return (a - r) // b


def emod(a, b):
    return a % abs(b)


def div(x, y):
    if x.kind != INT or y.kind != INT:
        raise TypeError("div is integer-only")
    if y.op == "lit":
        if y.val == 1:
            return x
        if x.op == "lit" and y.val != 0:
            return lit(ediv(x.val, y.val))
    return _mk("div", INT, None, (x, y))


def mod(x, y):
    if x.kind != INT or y.kind != INT:
        raise TypeError("mod is integer-only")
    if y.op == "lit":
        if y.val in (1, -1):
            return lit(0)
        if x.op == "lit" and y.val != 0:
            return lit(emod(x.val, y.val))
    return _mk("mod", INT, None, (x, y))


def cdiv(x, y):
    """Ceiling division for positive divisors, encoded through floor division."""
    return div(sub(add(x, y), lit(1)), y)


def _minmax(op, x, y):
    kind = _check_num(x, y)
    if x is y:
        return x
    if x.op == "lit" and y.op == "lit":
        return lit(min(x.val, y.val) if op == "min" else max(x.val, y.val), kind)
    a, b = sorted((x, y), key=_okey)
    return _mk(op, kind, None, (a, b))


def min_(x, y):
    return _minmax("min", x, y)


def max_(x, y):
    return _minmax("max", x, y)


# ----------------------------------------------------------- comparisons

def _diff(x, y):
    _check_num(x, y)
    p = _padd({}, _poly(x))
    _padd(p, _poly(y), -1)
    c0 = p.pop((), 0)
    return p, c0


def ge(x, y):
    p, c0 = _diff(x, y)
    if not p:
        return lit(c0 >= 0)
    return _mk("ge", BOOL, None, (_from_poly(p, x.kind), lit(-c0, x.kind)))


def gt(x, y):
    if x.kind == INT:
        return ge(x, add(y, lit(1)))
    p, c0 = _diff(x, y)
    if not p:
        return lit(c0 > 0)
    return _mk("gt", BOOL, None, (_from_poly(p, x.kind), lit(-c0, x.kind)))


def le(x, y):
    return ge(y, x)


def lt(x, y):
    return gt(y, x)


def eq(x, y):
    if x.kind == BOOL or y.kind == BOOL:
        if x.kind != y.kind:
            raise TypeError("comparing bool with number")
        if x is y:
            return TRUE
        if x.op == "lit" and y.op == "lit":
            return lit(x.val == y.val)
        a, b = sorted((x, y), key=_okey)
        return _mk("eq", BOOL, None, (a, b))
    p, c0 = _diff(x, y)
    if not p:
        return lit(c0 == 0)
    lead = min(p, key=_mono_key)
    if p[lead] < 0:
        p = {m: -c for m, c in p.items()}
        c0 = -c0
    return _mk("eq", BOOL, None, (_from_poly(p, x.kind), lit(-c0, x.kind)))


def ne(x, y):
    return not_(eq(x, y))


# --------------------------------------------------------------- boolean

def _check_bool(xs):
    for x in xs:
        if x.kind != BOOL:
            raise TypeError(f"expected bool term, got {x.kind}")


def and_(*xs):
    _check_bool(xs)
    out = []
    seen = set()
    for x in xs:
        parts = x.args if x.op == "and" else (x,)
        for p in parts:
            if p is TRUE:
                continue
            if p is FALSE:
                return FALSE
            if p not in seen:
                seen.add(p)
                out.append(p)
    if not out:
        return TRUE
    if len(out) == 1:
        return out[0]
    return _mk("and", BOOL, None, out)


def or_(*xs):
    _check_bool(xs)
    out = []
    seen = set()
    for x in xs:
        parts = x.args if x.op == "or" else (x,)
        for p in parts:
            if p is FALSE:
                continue
            if p is TRUE:
                return TRUE
            if p not in seen:
                seen.add(p)
                out.append(p)
    if not out:
        return FALSE
    if len(out) == 1:
        return out[0]
    return _mk("or", BOOL, None, out)


def not_(x):
    _check_bool((x,))
    if x.op == "lit":
        return lit(not x.val)
    if x.op == "not":
        return x.args[0]
    return _mk("not", BOOL, None, (x,))


def implies(a, b):
    return or_(not_(a), b)


def ite(c, t, e):
    _check_bool((c,))
    if t.kind != e.kind:
        raise TypeError(f"ite branches disagree: {t.kind} vs {e.kind}")
    if c.op == "lit":
        return t if c.val else e
    if t is e:
        return t
    return _mk("ite", t.kind, None, (c, t, e))


# --------------------------------------------------- tensors, reductions

def read(tensor, idx, kind):
    idx = tuple(idx)
    for i in idx:
        if i.kind != INT:
            raise TypeError("tensor indices must be integers")
    return _mk("read", kind, str(tensor), idx)


def red(op, pairs, body):
    """Reduction element ``op`` over ``pairs`` of (index symbol, extent)."""
    if op not in RED_OPS:
        raise ValueError(f"unknown reduction operator {op!r}")
    pairs = list(pairs)
    if not pairs:
        return body
    syms = [p[0] for p in pairs]
    sizes = [p[1] for p in pairs]
    for s in syms:
        if s.op != "sym":
            raise TypeError("reduction indices must be symbols")
    return _mk("red", body.kind, (op, len(pairs)), [body] + syms + sizes)


def red_parts(t):
    op, n = t.val
    return op, t.args[1:1 + n], t.args[1 + n:1 + 2 * n], t.args[0]


def _binder(op, pairs, body):
    if body.kind != BOOL:
        raise TypeError("quantifier body must be boolean")
    pairs = list(pairs)
    if not pairs or body.op == "lit":
        return body
    syms = [p[0] for p in pairs]
    for s_ in syms:
        if s_.op != "sym":
            raise TypeError("quantified indices must be symbols")
    return _mk(op, BOOL, len(pairs), [body] + syms + [p[1] for p in pairs])


def forall_in(pairs, body):
    """``body`` holds for every ``0 <= s < size`` over ``pairs``."""
    return _binder("all", pairs, body)


def exists_in(pairs, body):
    """``body`` holds for some ``0 <= s < size`` over ``pairs``."""
    return _binder("any", pairs, body)


def binder_parts(t):
    n = t.val
    return t.op, t.args[1:1 + n], t.args[1 + n:1 + 2 * n], t.args[0]


BINDERS = ("red", "all", "any")


def bound_parts(t):
    """(symbols, sizes, body) of any binding node."""
    if t.op == "red":
        _, syms, sizes, body = red_parts(t)
    else:
        _, syms, sizes, body = binder_parts(t)
    return syms, sizes, body


# ------------------------------------------------------------- traversal

def walk(root):
    """Unique subterms of ``root`` in deterministic post-order."""
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
        for a in reversed(t.args):
            if a not in seen:
                stack.append((a, False))
    return out


def free_symbols(t):
    """Free symbols of ``t`` (reduction indices are bound by their RedElem)."""
    if t._fs is not None:
        return t._fs
    for node in walk(t):
        if node._fs is not None:
            continue
        if node.op == "sym":
            node._fs = frozenset((node,))
        elif node.op in BINDERS:
            syms, sizes, body = bound_parts(node)
            fs = set(free_symbols(body)) - set(syms)
            for z in sizes:
                fs |= free_symbols(z)
            node._fs = frozenset(fs)
        else:
            fs = frozenset()
            for a in node.args:
                fs = fs | a._fs
            node._fs = fs
    return t._fs


def contains(t, pred):
    return any(pred(n) for n in walk(t))


def rebuild(t, args):
    op = t.op
    if op in ("lit", "sym"):
        return t
    if op == "add":
        return add(*args)
    if op == "mul":
        return mul(*args)
    if op == "div":
        return div(*args)
    if op == "mod":
        return mod(*args)
    if op == "min":
        return min_(*args)
    if op == "max":
        return max_(*args)
    if op == "ge":
        return ge(*args)
    if op == "gt":
        return gt(*args)
    if op == "eq":
        return eq(*args)
    if op == "and":
        return and_(*args)
    if op == "or":
        return or_(*args)
    if op == "not":
        return not_(*args)
    if op == "ite":
        return ite(*args)
    if op == "read":
        return read(t.val, args, t.kind)
    if op == "red":
        rop, n = t.val
        body = args[0]
        return red(rop, list(zip(args[1:1 + n], args[1 + n:1 + 2 * n])), body)
    if op in ("all", "any"):
        n = t.val
        return _binder(op, list(zip(args[1:1 + n], args[1 + n:1 + 2 * n])), args[0])
    raise ValueError(f"unknown op {op}")


def substitute(t, mapping):
    """Replace subterms per ``mapping`` (Term -> Term), re-normalising on the way up."""
    if not mapping:
        return t
    memo = {}
    for node in walk(t):
        if node in mapping:
            memo[node] = mapping[node]
            continue
        if not node.args:
            memo[node] = node
            continue
        new = [memo[a] for a in node.args]
        if all(n is o for n, o in zip(new, node.args)):
            memo[node] = node
        else:
            memo[node] = rebuild(node, new)
    return memo[t]


def conjuncts(t):
    return list(t.args) if t.op == "and" else ([] if t is TRUE else [t])


# ------------------------------------------------------------ evaluation

class EvalError(Exception):
    pass


def evaluate(t, syms, tensors=None, memo=None):
    """Evaluate ``t`` under concrete symbol values.

    ``syms`` maps symbol names to Python values; ``tensors`` maps tensor
    names to callables taking an index tuple.
    """
    tensors = tensors or {}
    memo = {} if memo is None else memo
    for node in scope_walk(t):
        if node in memo:
            continue
        try:
            memo[node] = _eval_node(node, memo, syms, tensors)
        except EvalError as exc:
            # an untaken ite branch may legitimately fail; fail only when used
            memo[node] = _Failed(exc)
    out = memo[t]
    if isinstance(out, _Failed):
        raise out.exc
    return out


class _Failed:
    __slots__ = ("exc",)

    def __init__(self, exc):
        self.exc = exc


def scope_walk(root):
    """Post-order like :func:`walk`, but without entering binder bodies."""
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
        kids = bound_parts(t)[1] if t.op in BINDERS else t.args
        for a in reversed(kids):
            if a not in seen:
                stack.append((a, False))
    return out


def _eval_node(n, memo, syms, tensors):
    op = n.op
    if op == "lit":
        return n.val
    if op == "sym":
        try:
            return syms[n.val]
        except KeyError:
            raise EvalError(f"unbound symbol {n.val}") from None
    if op == "red":
        return _eval_red(n, syms, tensors)
    if op in ("all", "any"):
        return _eval_binder(n, syms, tensors)
    if op == "ite":
        c = memo[n.args[0]]
        if isinstance(c, _Failed):
            raise c.exc
        v = memo[n.args[1] if c else n.args[2]]
        if isinstance(v, _Failed):
            raise v.exc
        return v
    a = [memo[x] for x in n.args]
    for v in a:
        if isinstance(v, _Failed):
            raise v.exc
    if op == "add":
        return sum(a[1:], a[0])
    if op == "mul":
        out = a[0]
        for v in a[1:]:
            out = out * v
        return out
    if op in ("div", "mod"):
        if a[1] == 0:
            raise EvalError("division by zero")
        return ediv(a[0], a[1]) if op == "div" else emod(a[0], a[1])
    if op == "min":
        return min(a)
    if op == "max":
        return max(a)
    if op == "ge":
        return a[0] >= a[1]
    if op == "gt":
        return a[0] > a[1]
    if op == "eq":
        return a[0] == a[1]
    if op == "and":
        return all(a)
    if op == "or":
        return any(a)
    if op == "not":
        return not a[0]
    if op == "ite":
        return a[1] if a[0] else a[2]
    if op == "read":
        fn = tensors.get(n.val)
        if fn is None:
            raise EvalError(f"unbound tensor {n.val}")
        return fn(tuple(a))
    raise EvalError(f"cannot evaluate {op}")


def _eval_red(n, syms, tensors):
    op, rsyms, sizes, body = red_parts(n)
    extents = [evaluate(z, syms, tensors) for z in sizes]
    acc = None
    inner = dict(syms)
    for point in itertools.product(*(range(max(e, 0)) for e in extents)):
        for s, v in zip(rsyms, point):
            inner[s.val] = v
        v = evaluate(body, inner, tensors)
        if acc is None:
            acc = v
        elif op == "add":
            acc = acc + v
        elif op == "max":
            acc = max(acc, v)
        else:
            acc = min(acc, v)
    if acc is None:
        if op != "add":
            raise EvalError(f"empty {op} reduction")
        return 0 if n.kind == INT else Fraction(0)
    return acc


def _eval_binder(n, syms, tensors):
    op, bsyms, sizes, body = binder_parts(n)
    extents = [evaluate(z, syms, tensors) for z in sizes]
    inner = dict(syms)
    want = op == "any"
    for point in itertools.product(*(range(max(e, 0)) for e in extents)):
        for s_, v in zip(bsyms, point):
            inner[s_.val] = v
        if bool(evaluate(body, inner, tensors)) == want:
            return want
    return not want


# -------------------------------------------------------------- printing

_INFIX = {"add": " + ", "mul": "*", "ge": " >= ", "gt": " > ", "eq": " == ", "and": " & ", "or": " | "}


def show(t, depth=12):
    if depth <= 0:
        return "..."
    op = t.op
    if op == "lit":
        return str(t.val).lower() if t.kind == BOOL else str(t.val)
    if op == "sym":
        return t.val
    sub_ = [show(a, depth - 1) for a in t.args]
    if op in _INFIX:
        return "(" + _INFIX[op].join(sub_) + ")"
    if op == "read":
        return f"{t.val}[{', '.join(sub_)}]"
    if op == "red":
        rop, syms, sizes, body = red_parts(t)
        rng = ", ".join(f"{s.val}<{show(z, depth - 1)}" for s, z in zip(syms, sizes))
        return f"Red{rop}{{{rng}}}({show(body, depth - 1)})"
    if op in ("all", "any"):
        _, syms, sizes, body = binder_parts(t)
        rng = ", ".join(f"{s.val}<{show(z, depth - 1)}" for s, z in zip(syms, sizes))
        return f"{op}{{{rng}}}({show(body, depth - 1)})"
    if op == "not":
        return f"!{sub_[0]}"
    return f"{op}({', '.join(sub_)})"
