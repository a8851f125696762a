"""Sufficient sub-goals for hard equality obligations.

An equality between two similarly built terms is split along their common
structure: matching ``ite`` guards must agree, matching factors and read
indices must be equal.  Each piece only needs the assumptions that share
symbols with it, and guards are compared one independent symbol group at a
time.  Proving every piece proves the original; a failed piece proves
nothing, so callers fall back to the whole query.

Pieces produced for different named axes of one aggregated axis are
usually renamings of each other.  :func:`canonical` renames task symbols by
their base map and relative axis position so such pieces print identically
and can share one solver answer.
"""

from __future__ import annotations

from . import terms as T

MAX_PIECES = 256


def flatten_ite(t):
    """``ite(a, ite(b, x, v), v)`` -> ``ite(a & b, x, v)``, repeatedly."""
    while t.op == "ite":
        c, x, v = t.args
        if x.op == "ite" and x.args[2] is v:
            t = T.ite(T.and_(c, x.args[0]), x.args[1], v)
            continue
        break
    return t


def _signature(t):
    return (t.op, frozenset(n.val for n in T.walk(t) if n.op == "read"))


def _pair_factors(xs, ys):
    if len(xs) != len(ys):
        return None
    left = list(xs)
    pairs = []
    for y in ys:
        if y in left:
            left.remove(y)
            continue
        cands = [x for x in left if _signature(x) == _signature(y)]
        if len(cands) != 1:
            return None
        left.remove(cands[0])
        pairs.append((cands[0], y))
    return pairs


def _groups(atoms):
    """Partition atoms into classes connected through shared free symbols."""
    parent = {}

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    owner = {}
    for k, (_, a) in enumerate(atoms):
        parent[k] = k
        for s in T.free_symbols(a):
            if s in owner:
                parent[find(k)] = find(owner[s])
            else:
                owner[s] = k
    out = {}
    for k in range(len(atoms)):
        out.setdefault(find(k), []).append(atoms[k])
    return [out[r] for r in sorted(out)]


def _split_iff(c1, c2, guards, out):
    atoms = [(0, a) for a in T.conjuncts(c1)] + [(1, a) for a in T.conjuncts(c2)]
    for group in _groups(atoms):
        lhs = T.and_(*(a for side, a in group if side == 0))
        rhs = T.and_(*(a for side, a in group if side == 1))
        if lhs is not rhs:
            out.append((guards, T.eq(lhs, rhs)))


def split_eq(lhs, rhs, guards=(), out=None):
    """List of ``(guards, goal)`` pieces whose conjunction implies ``lhs == rhs``."""
    out = [] if out is None else out
    if lhs is rhs:
        return out
    if len(out) > MAX_PIECES:
        out.append((tuple(guards), T.eq(lhs, rhs)))
        return out
    lhs, rhs = flatten_ite(lhs), flatten_ite(rhs)
    guards = tuple(guards)
    if lhs.op == "ite" and rhs.op == "ite" and lhs.kind != T.BOOL:
        c1, c2 = lhs.args[0], rhs.args[0]
        _split_iff(c1, c2, guards, out)
        split_eq(lhs.args[1], rhs.args[1], guards + (c1,), out)
        split_eq(lhs.args[2], rhs.args[2], guards + (T.not_(c1),), out)
        return out
    if lhs.op == "mul" and rhs.op == "mul":
        pairs = _pair_factors(lhs.args, rhs.args)
        if pairs is not None:
            for a, b in pairs:
                split_eq(a, b, guards, out)
            return out
    if lhs.op == "read" and rhs.op == "read" and lhs.val == rhs.val:
        for a, b in zip(lhs.args, rhs.args):
            if a is not b:
                out.append((guards, T.eq(a, b)))
        return out
    out.append((guards, T.eq(lhs, rhs)))
    return out


def relevant(assume, goal):
    """Conjuncts of ``assume`` transitively sharing a symbol with ``goal``."""
    atoms = T.conjuncts(assume)
    need = set(T.free_symbols(goal))
    kept = [False] * len(atoms)
    changed = True
    while changed:
        changed = False
        for k, a in enumerate(atoms):
            if kept[k]:
                continue
            fs = T.free_symbols(a)
            if fs & need:
                kept[k] = True
                need |= fs
                changed = True
    return T.and_(*(a for k, a in enumerate(atoms) if kept[k]))


def canonical(inst, terms_):
    """Rename task symbols to axis-position names; identity when that would not be injective."""
    syms = set()
    for t in terms_:
        syms |= T.free_symbols(t)
    axes = {}
    for s in syms:
        info = inst.info.get(s.val)
        if info is not None and info.named_axis is not None:
            axes.setdefault(info.aggaxis, set()).add(info.named_axis)
    pos = {}
    for agg, named in axes.items():
        order = inst.expansion[agg]
        for k, ax in enumerate(sorted(named, key=order.index)):
            pos[ax] = f"{agg}#{k}"
    mapping = {}
    for s in syms:
        info = inst.info.get(s.val)
        if info is None:
            continue
        suffix = s.val.split("~", 1)[1] if "~" in s.val else ""
        name = f"{info.base}.{pos[info.named_axis]}" if info.named_axis else f"{info.base}."
        if suffix:
            name += f"~{suffix}"
        mapping[s] = T.sym(name, s.kind)
    if len(set(mapping.values())) != len(mapping):
        return list(terms_)
    return [T.substitute(t, mapping) for t in terms_]


# ------------------------------------------------------------ div/mod lemmas

def _lead(d):
    """The unique highest-degree monomial of ``d`` if its coefficient is +-1, else None.

    Dividing by it strictly lowers degree at every step, so peeling terminates.
    """
    p = T._poly(d)
    if not p:
        return None
    top = max(len(m) for m in p)
    heads = [(m, c) for m, c in p.items() if len(m) == top]
    if top == 0 or len(heads) != 1 or abs(heads[0][1]) != 1:
        return None
    return heads[0]


def _contains(m, sub):
    rest = list(m)
    for a in sub:
        if a not in rest:
            return None
        rest.remove(a)
    return tuple(rest)


def _peel(e, d):
    """Write ``e`` as ``rest + d*k`` by polynomial division on one monomial of ``d``."""
    lead = _lead(d)
    rest = dict(T._poly(e))
    k = {}
    if lead is None:
        return e, T.lit(0)
    m0, c0 = lead
    dp = T._poly(d)
    while True:
        hit = None
        for m, c in sorted(rest.items(), key=lambda mc: T._mono_key(mc[0])):
            q = _contains(m, m0)
            if q is not None:
                hit = (tuple(sorted(q, key=T._okey)), c * c0)
                break
        if hit is None:
            break
        q, c = hit
        T._padd(k, {q: c})
        T._padd(rest, T._pmul(dp, {q: c}), -1)
    return T._from_poly(rest, T.INT), T._from_poly(k, T.INT)


def _quot(e, b):
    rest, k = _peel(e, b)
    return T.add(T.div(rest, b), k)


def _rem(e, b):
    return T.mod(_peel(e, b)[0], b)


def _negative(e):
    p = T._poly(e)
    if not p:
        return False
    m, c = min(p.items(), key=lambda mc: T._mono_key(mc[0]))
    return c < 0


def _factor(d):
    """``(b, c)`` with ``d == b*c`` for an atom ``b`` shared by every monomial, else None."""
    p = T._poly(d)
    if not p or () in p:
        return None
    common = set(next(iter(p)))
    for m in p:
        common &= set(m)
    for b in sorted(common, key=T._okey):
        c = {}
        for m, v in p.items():
            mm = list(m)
            mm.remove(b)
            c[tuple(mm)] = v
        cterm = T._from_poly(c, T.INT)
        if cterm.op != "lit":
            return b, cterm
    return None


def _lemmas_for(n):
    e, d = n.args
    out = []
    if d.op == "lit":
        return out
    nonzero = T.ne(d, T.lit(0))
    rest, k = _peel(e, d)
    if rest is not e:
        same = T.eq(n, T.add(T.div(rest, d), k) if n.op == "div" else T.mod(rest, d))
        out.append(T.implies(nonzero, same))
    elif _negative(e):
        # pick one sign per dividend so x and -x share their remainder terms
        flip = T.neg(e)
        r = T.mod(flip, d)
        zero = T.eq(r, T.lit(0))
        if n.op == "mod":
            out.append(T.implies(T.ge(d, T.lit(1)), T.eq(n, T.ite(zero, T.lit(0), T.sub(d, r)))))
        else:
            q = T.neg(T.div(flip, d))
            out.append(T.implies(T.ge(d, T.lit(1)), T.eq(n, T.ite(zero, q, T.sub(q, T.lit(1))))))
    f = _factor(d)
    if f is not None:
        b, c = f
        pos = T.and_(T.ge(b, T.lit(1)), T.ge(c, T.lit(1)))
        inner = _quot(e, b)
        if n.op == "div":
            same = T.eq(n, T.div(inner, c))
        else:
            same = T.eq(n, T.add(_rem(e, b), T.mul(b, T.mod(inner, c))))
        out.append(T.implies(pos, same))
    return out


def divmod_lemmas(roots, depth=3):
    """Valid facts relating div/mod terms with symbolic divisors to simpler ones.

    Multiples of the divisor are pulled out of the dividend and a product
    divisor is peeled one factor at a time.  Each fact holds for every
    integer assignment, so adding them never changes satisfiability; they
    just spare the solver the nonlinear reasoning.
    """
    seen = set()
    scope = set()
    for r in roots:
        scope |= T.free_symbols(r)
    frontier = [n for r in roots for n in T.walk(r)
                if n.op in ("div", "mod") and T.free_symbols(n) <= scope]
    out = []
    for _ in range(depth):
        nxt = []
        for n in frontier:
            if n in seen:
                continue
            seen.add(n)
            for lem in _lemmas_for(n):
                if lem is T.TRUE or lem in out:
                    continue
                out.append(lem)
                nxt.extend(m for m in T.walk(lem) if m.op in ("div", "mod") and m not in seen)
        frontier = nxt
    return out
