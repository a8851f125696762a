"""Symbolic evaluation of instantiated tensor expressions.

A :class:`SymTensor` pairs a symbolic shape with a value function from a
symbolic access (axis id -> index term) to a scalar term.  Side conditions
of every operator are appended to the evaluator's validity list; the value
function is only meaningful on accesses that are in range.
"""

from __future__ import annotations

from . import ir
from . import terms as T
from .errors import AxesMismatch, DomainMismatch, KindMismatch, NonSingletonAxis, UnsupportedOp


class SymTensor:
    __slots__ = ("axes", "shape", "elem", "_fn", "_memo")

    def __init__(self, shape, elem, fn):
        self.shape = shape
        self.axes = shape.domain
        self.elem = elem
        self._fn = fn
        self._memo = {}

    def at(self, access):
        key = tuple(access[a] for a in self.axes)
        hit = self._memo.get(key)
        if hit is None:
            hit = self._fn(dict(zip(self.axes, key)))
            self._memo[key] = hit
        return hit

    def __repr__(self):
        return f"SymTensor(shape={self.shape!r}, elem={self.elem})"


def _ge0(m):
    return m.fold(lambda v: T.ge(v, T.lit(0)))


def _lit_of(v, kind):
    if isinstance(v, T.Term):
        return v
    if kind == T.BOOL:
        return T.lit(bool(v), T.BOOL)
    return T.lit(v, kind)


def _need_axes(m, axes, what):
    if set(m.domain) != set(axes):
        raise DomainMismatch(f"{what} attribute covers {list(m.domain)}, operand has {list(axes)}")


def _same_axes(*ts, what):
    first = set(ts[0].axes)
    for t in ts[1:]:
        if set(t.axes) != first:
            raise AxesMismatch(f"{what}: axis sets {sorted(first)} and {sorted(t.axes)} differ")


def _same_kind(*ts, what, numeric=False):
    kinds = {t.elem for t in ts}
    if len(kinds) != 1:
        raise KindMismatch(f"{what}: element kinds {sorted(kinds)} differ")
    if numeric and ts[0].elem not in T.NUMERIC:
        raise KindMismatch(f"{what}: needs numeric elements")


def _singleton(axisset, what):
    axisset = frozenset(axisset)
    if len(axisset) != 1:
        raise NonSingletonAxis(f"{what} needs a single axis, got {sorted(axisset)}")
    return next(iter(axisset))


def _is_zero(t):
    return t.op == "lit" and t.val == 0


class Evaluator:
    """Evaluates expressions over a fixed tensor environment.

    ``fresh(base, named_axis, role)`` supplies reduction indices when a rule
    leaves them unnamed.
    """

    def __init__(self, env, fresh=None):
        self.env = env
        self.valid = []
        self._fresh = fresh
        self._cache = {}
        self._auto = 0

    # -- entry points ----------------------------------------------------

    def eval(self, e):
        hit = self._cache.get(e)
        if hit is not None:
            return hit
        method = getattr(self, "_e_" + e.opname, None)
        if method is None:
            raise UnsupportedOp(e.opname)
        out = method(e)
        self._cache[e] = out
        return out

    def validity(self):
        return T.and_(*self.valid)

    def _assert(self, cond):
        self.valid.append(cond)

    def _fresh_indices(self, axes, base):
        if self._fresh is None:
            raise UnsupportedOp(f"{base} without named reduction indices needs a symbol supply")
        self._auto += 1
        return ir.Map([(a, self._fresh(f"{base}{self._auto}", a, "index")) for a in sorted(axes)])

    # -- leaves ------------------------------------------------------------

    def _e_var(self, e):
        sig = self.env[e.name]
        self._assert(_ge0(sig.shape))
        axes = sig.axes
        name, elem = sig.name, sig.elem
        return SymTensor(sig.shape, elem, lambda A: T.read(name, [A[a] for a in axes], elem))

    def _e_const(self, e):
        return self.const(e.value, e.shape, ir.ELEM_KINDS[e.elem])

    def _e_iota(self, e):
        return self.iota(e.shape, e.axis)

    def const(self, value, shape, elem):
        self._assert(_ge0(shape))
        v = _lit_of(value, elem)
        return SymTensor(shape, elem, lambda A: v)

    def iota(self, shape, axis):
        a = _singleton(axis, "iota")
        if a not in shape:
            raise AxesMismatch(f"iota axis {a} is not part of its shape")
        self._assert(_ge0(shape))
        return SymTensor(shape, T.INT, lambda A: A[a])

    # -- structural ops ----------------------------------------------------

    def _e_expand(self, e):
        return self.expand(self.eval(e.arg), e.shape)

    def expand(self, t, shape):
        if set(shape.domain) & set(t.axes):
            raise AxesMismatch(f"expand over existing axes {sorted(set(shape.domain) & set(t.axes))}")
        self._assert(_ge0(shape))
        axes = t.axes
        return SymTensor(t.shape.union(shape), t.elem, lambda A: t.at({a: A[a] for a in axes}))

    def _e_binary(self, e):
        return self.binary(e.op, self.eval(e.lhs), self.eval(e.rhs))

    def binary(self, op, a, b):
        _same_axes(a, b, what=f"binary {op}")
        _same_kind(a, b, what=f"binary {op}")
        self._assert(a.shape.fold(T.eq, b.shape))
        kind = a.elem
        if op in ("add", "sub", "mul", "max", "min"):
            if kind not in T.NUMERIC:
                raise KindMismatch(f"binary {op} on {kind}")
            fn = {"add": T.add, "sub": T.sub, "mul": T.mul, "max": T.max_, "min": T.min_}[op]
            out = kind
        elif op in ("and", "or"):
            if kind != T.BOOL:
                raise KindMismatch(f"binary {op} on {kind}")
            fn = T.and_ if op == "and" else T.or_
            out = T.BOOL
        elif op in ("eq", "ne", "lt", "le", "gt", "ge"):
            if op not in ("eq", "ne") and kind not in T.NUMERIC:
                raise KindMismatch(f"binary {op} on {kind}")
            fn = {"eq": T.eq, "ne": T.ne, "lt": T.lt, "le": T.le, "gt": T.gt, "ge": T.ge}[op]
            out = T.BOOL
        else:
            raise UnsupportedOp(f"binary {op}")
        return SymTensor(a.shape, out, lambda A: fn(a.at(A), b.at(A)))

    def _e_pad_low(self, e):
        t = self.eval(e.arg)
        return self.pad_low(t, e.value, e.low)

    def pad_low(self, t, value, low):
        _need_axes(low, t.axes, "pad_low")
        out = t.shape.fmap(T.add, low)
        self._assert(_ge0(out))
        v = _lit_of(value, t.elem)
        live = [a for a in t.axes if not _is_zero(low[a])]

        def fn(A):
            cond = T.and_(*(T.ge(A[a], low[a]) for a in live))
            return T.ite(cond, t.at({a: T.sub(A[a], low[a]) for a in t.axes}), v)

        return SymTensor(out, t.elem, fn)

    def _e_pad(self, e):
        t = self.eval(e.arg)
        return self.pad(t, e.value, e.low, e.high, e.interior)

    def pad(self, t, value, low, high, interior):
        for m in (low, high, interior):
            _need_axes(m, t.axes, "pad")
        S = t.shape
        self._assert(_ge0(interior))
        inner = S.fmap(lambda s, i: T.add(s, T.mul(T.sub(s, T.lit(1)), i)), interior)
        upto = inner.fmap(T.add, low)
        out = upto.fmap(T.add, high)
        self._assert(_ge0(out))
        v = _lit_of(value, t.elem)
        live = [a for a in t.axes if not (_is_zero(low[a]) and _is_zero(high[a]) and _is_zero(interior[a]))]

        def fn(A):
            parts = []
            src = {}
            for a in t.axes:
                step = T.add(interior[a], T.lit(1))
                off = T.sub(A[a], low[a])
                src[a] = T.div(off, step)
                if a in live:
                    parts.append(T.and_(T.ge(A[a], low[a]), T.lt(A[a], upto[a]),
                                        T.eq(T.mod(off, step), T.lit(0))))
            return T.ite(T.and_(*parts), t.at(src), v)

        return SymTensor(out, t.elem, fn)

    def _e_slice(self, e):
        return self.slice(self.eval(e.arg), e.start, e.end, e.stride)

    def slice(self, t, start, end, stride):
        for m in (start, end, stride):
            _need_axes(m, t.axes, "slice")
        self._assert(start.fold(lambda s: T.ge(s, T.lit(0))))
        self._assert(start.fold(T.le, end))
        self._assert(end.fold(T.le, t.shape))
        self._assert(stride.fold(lambda p: T.gt(p, T.lit(0))))
        out = start.fmap(lambda s, e_, p: T.cdiv(T.sub(e_, s), p), end, stride)
        return SymTensor(out, t.elem,
                         lambda A: t.at({a: T.add(start[a], T.mul(A[a], stride[a])) for a in t.axes}))

    def _e_dy_slice(self, e):
        return self.dy_slice(self.eval(e.arg), e.start, e.size)

    def dy_slice(self, t, start, size):
        for m in (start, size):
            _need_axes(m, t.axes, "dy_slice")
        self._assert(start.fold(lambda i, s, S: T.le(T.add(i, s), S), size, t.shape))
        self._assert(size.fold(lambda s: T.gt(s, T.lit(0))))
        self._assert(start.fold(lambda i: T.ge(i, T.lit(0))))
        return SymTensor(size, t.elem, lambda A: t.at({a: T.add(A[a], start[a]) for a in t.axes}))

    def _e_dyup_slice(self, e):
        return self.dyup_slice(self.eval(e.arg), self.eval(e.update), e.start)

    def dyup_slice(self, t, u, start):
        _same_axes(t, u, what="dyup_slice")
        _same_kind(t, u, what="dyup_slice")
        _need_axes(start, t.axes, "dyup_slice")
        Su = u.shape
        self._assert(start.fold(lambda i, s, S: T.le(T.add(i, s), S), Su, t.shape))
        self._assert(Su.fold(lambda s: T.gt(s, T.lit(0))))
        self._assert(start.fold(lambda i: T.ge(i, T.lit(0))))

        def fn(A):
            inside = T.and_(*(T.and_(T.ge(A[a], start[a]), T.lt(A[a], T.add(start[a], Su[a]))) for a in t.axes))
            return T.ite(inside, u.at({a: T.sub(A[a], start[a]) for a in t.axes}), t.at(A))

        return SymTensor(t.shape, t.elem, fn)

    def _e_reduce(self, e):
        return self.reduce(e.op, self.eval(e.arg), e.indices)

    def reduce(self, op, t, indices):
        dom = indices.domain
        if not set(dom) <= set(t.axes):
            raise AxesMismatch(f"reduce over {sorted(set(dom) - set(t.axes))} not in operand")
        if t.elem not in T.NUMERIC:
            raise KindMismatch("reduce needs numeric elements")
        if op in ("max", "min"):
            self._assert(t.shape.restrict(dom).fold(lambda s: T.gt(s, T.lit(0))))
        pairs = [(indices[a], t.shape[a]) for a in dom]
        keep = [a for a in t.axes if a not in dom]

        def fn(A):
            full = {a: A[a] for a in keep}
            full.update({a: indices[a] for a in dom})
            return T.red(op, pairs, t.at(full))

        return SymTensor(t.shape.without(dom), t.elem, fn)

    def _e_relabel(self, e):
        return self.relabel(self.eval(e.arg), e.mapping)

    def relabel(self, t, pairs):
        ren = dict(pairs)
        if not set(ren) <= set(t.axes):
            raise AxesMismatch(f"relabel of axes {sorted(set(ren) - set(t.axes))} not in operand")
        target = {a: ren.get(a, a) for a in t.axes}
        if len(set(target.values())) != len(target):
            raise AxesMismatch("relabel is not injective")
        shape = ir.Map([(target[a], t.shape[a]) for a in t.axes])
        return SymTensor(shape, t.elem, lambda A: t.at({a: A[target[a]] for a in t.axes}))

    def _e_concat(self, e):
        return self.concat(self.eval(e.lhs), self.eval(e.rhs), e.axis)

    def concat(self, a, b, axis):
        x = _singleton(axis, "concat")
        _same_axes(a, b, what="concat")
        _same_kind(a, b, what="concat")
        if x not in a.axes:
            raise AxesMismatch(f"concat axis {x} not in operands")
        rest = [k for k in a.axes if k != x]
        self._assert(a.shape.restrict(rest).fold(T.eq, b.shape.restrict(rest)))
        shape = a.shape.override(ir.Map({x: T.add(a.shape[x], b.shape[x])}))
        off = a.shape[x]

        def fn(A):
            moved = dict(A)
            moved[x] = T.sub(A[x], off)
            return T.ite(T.ge(A[x], off), b.at(moved), a.at(A))

        return SymTensor(shape, a.elem, fn)

    def _e_reverse(self, e):
        return self.reverse(self.eval(e.arg), e.axes)

    def reverse(self, t, axes):
        axes = frozenset(axes)
        if not axes <= set(t.axes):
            raise AxesMismatch(f"reverse of axes {sorted(axes - set(t.axes))} not in operand")

        def fn(A):
            return t.at({a: (T.sub(T.sub(t.shape[a], A[a]), T.lit(1)) if a in axes else A[a]) for a in t.axes})

        return SymTensor(t.shape, t.elem, fn)

    def _e_select(self, e):
        return self.select(self.eval(e.pred), self.eval(e.on_true), self.eval(e.on_false))

    def select(self, p, a, b):
        _same_axes(p, a, b, what="select")
        if p.elem != T.BOOL:
            raise KindMismatch("select predicate must be bool")
        _same_kind(a, b, what="select")
        self._assert(p.shape.fold(T.eq, a.shape))
        self._assert(a.shape.fold(T.eq, b.shape))
        return SymTensor(a.shape, a.elem, lambda A: T.ite(p.at(A), a.at(A), b.at(A)))

    def _e_clamp(self, e):
        return self.clamp(self.eval(e.lo), self.eval(e.arg), self.eval(e.hi))

    def clamp(self, lo, t, hi):
        _same_axes(lo, t, hi, what="clamp")
        _same_kind(lo, t, hi, what="clamp", numeric=True)
        self._assert(lo.shape.fold(T.eq, t.shape))
        self._assert(t.shape.fold(T.eq, hi.shape))
        return SymTensor(t.shape, t.elem, lambda A: T.min_(T.max_(t.at(A), lo.at(A)), hi.at(A)))

    # -- contractions --------------------------------------------------------

    def _e_dot(self, e):
        return self.dot(self.eval(e.lhs), self.eval(e.rhs), e.contract, e.batch, e.indices)

    def dot(self, a, b, contract, batch, indices=None):
        contract = frozenset(contract)
        batch = frozenset(batch)
        common = set(a.axes) & set(b.axes)
        if contract & batch or (contract | batch) != common:
            raise AxesMismatch(f"dot: contracting {sorted(contract)} and batch {sorted(batch)} "
                               f"must partition the common axes {sorted(common)}")
        _same_kind(a, b, what="dot", numeric=True)
        if indices is None:
            indices = self._fresh_indices(contract, "dot")
        elif set(indices.domain) != contract:
            raise DomainMismatch("dot indices must cover exactly the contracting axes")
        ea = self.expand(a, b.shape.without(common))
        eb = self.expand(b, a.shape.without(common))
        return self.reduce("add", self.binary("mul", ea, eb), indices)

    def _spatial(self, i, w, feature, what):
        feature = frozenset(feature)
        common = set(i.axes) & set(w.axes)
        if not feature <= common:
            raise AxesMismatch(f"{what}: feature axes must be shared by input and weight")
        return feature, frozenset(common - feature)

    def _e_conv_base(self, e):
        return self.conv_base(self.eval(e.input), self.eval(e.weight), e.feature, e.stride, e.indices)

    def conv_base(self, i, w, feature, stride, indices=None):
        feature, spatial = self._spatial(i, w, feature, "conv_base")
        _need_axes(stride, spatial, "conv_base stride")
        _same_kind(i, w, what="conv_base", numeric=True)
        Si, Sw = i.shape, w.shape
        self._assert(stride.fold(lambda p: T.gt(p, T.lit(0))))
        self._assert(Si.restrict(spatial).fold(T.ge, Sw.restrict(spatial)))
        self._assert(Si.restrict(feature).fold(T.eq, Sw.restrict(feature)))
        contract = feature | spatial
        if indices is None:
            indices = self._fresh_indices(contract, "conv")
        elif set(indices.domain) != contract:
            raise DomainMismatch("conv indices must cover feature and spatial axes")
        batch_axes = [a for a in i.axes if a not in w.axes]
        out_axes = [a for a in w.axes if a not in i.axes]
        sp_size = ir.Map([(a, T.add(T.div(T.sub(Si[a], Sw[a]), stride[a]), T.lit(1))) for a in sorted(spatial)])
        shape = Si.restrict(batch_axes).union(Sw.restrict(out_axes)).union(sp_size)

        def fn(A):
            # dot(slice(input, A*stride, A*stride + window, 1), weight, feature+spatial, {}) at A
            start = ir.Map([(a, T.mul(A[a], stride[a]) if a in spatial else T.lit(0)) for a in i.axes])
            end = ir.Map([(a, T.add(start[a], Sw[a]) if a in spatial else Si[a]) for a in i.axes])
            ones = ir.Map.const(i.axes, T.lit(1))
            saved = self.valid
            self.valid = []
            try:
                window = self.slice(i, start, end, ones)
                prod = self.dot(window, w, contract, frozenset(), indices)
            finally:
                self.valid = saved
            return prod.at({a: A[a] for a in prod.axes})

        return SymTensor(shape, i.elem, fn)

    def _e_conv(self, e):
        return self.conv(self.eval(e.input), self.eval(e.weight), e.feature, e.low, e.high,
                         e.lhs_dilation, e.rhs_dilation, e.stride, e.indices)

    def conv(self, i, w, feature, low, high, lhs_dil, rhs_dil, stride, indices=None):
        feature, spatial = self._spatial(i, w, feature, "conv")
        for m, n in ((low, "low"), (high, "high"), (lhs_dil, "lhs_dilation"), (rhs_dil, "rhs_dilation")):
            _need_axes(m, spatial, f"conv {n}")
        zero = T.lit(0)

        def widen(m, axes):
            return ir.Map([(a, m[a] if a in spatial else zero) for a in axes])

        less1 = lambda d: T.sub(d, T.lit(1))
        pi = self.pad(i, 0, widen(low, i.axes), widen(high, i.axes), widen(lhs_dil.fmap(less1), i.axes))
        zw = ir.Map.const(w.axes, zero)
        pw = self.pad(w, 0, zw, zw, widen(rhs_dil.fmap(less1), w.axes))
        return self.conv_base(pi, pw, feature, stride, indices)


def sym_eval(expr, env, fresh=None):
    """Evaluate ``expr``; returns ``(SymTensor, validity term)``."""
    ev = Evaluator(env, fresh)
    out = ev.eval(expr)
    return out, ev.validity()


def shape_of(expr, env, fresh=None):
    out, _ = sym_eval(expr, env, fresh)
    return out.shape


# ---------------------------------------------------- reduction normalisation

def _rename_bound(node, avoid, fresh_name):
    """Alpha-rename the indices of RedElem ``node`` that clash with ``avoid``."""
    op, syms, sizes, body = T.red_parts(node)
    mapping = {}
    for s in syms:
        if s in avoid:
            mapping[s] = T.sym(fresh_name(s.val), s.kind)
    if not mapping:
        return node
    body = T.substitute(body, mapping)
    return T.red(op, [(mapping.get(s, s), z) for s, z in zip(syms, sizes)], body)


def normalize_reductions(t, fresh_name=None):
    """Apply the three reduction-element rules bottom-up to a fixpoint.

    * ``v * Red+_X f``            ->  ``Red+_X (v * f)``
    * ``Red+_X f * Red+_Y g``     ->  ``Red+_{X,Y} (f * g)``
    * ``Red@_X (Red@_Y f)``       ->  ``Red@_{X,Y} f``
    """
    counter = [0]

    def default_fresh(base):
        counter[0] += 1
        return f"{base}'{counter[0]}"

    fresh_name = fresh_name or default_fresh
    memo = {}
    for node in T.walk(t):
        if not node.args:
            memo[node] = node
            continue
        new = [memo[a] for a in node.args]
        cur = node if all(n is o for n, o in zip(new, node.args)) else T.rebuild(node, new)
        memo[node] = _normalize_step(cur, fresh_name)
    return memo[t]


def _normalize_step(node, fresh_name):
    while True:
        if node.op == "red":
            op, syms, sizes, body = T.red_parts(node)
            if body.op == "red" and body.val[0] == op:
                inner = _rename_bound(body, set(syms) | _free_in(sizes), fresh_name)
                _, isyms, isizes, ibody = T.red_parts(inner)
                node = T.red(op, list(zip(syms, sizes)) + list(zip(isyms, isizes)), ibody)
                continue
        elif node.op == "mul":
            merged = _merge_product(node, fresh_name)
            if merged is not node:
                node = merged
                continue
        return node


def _free_in(terms_):
    out = set()
    for z in terms_:
        out |= T.free_symbols(z)
    return out


def _merge_product(node, fresh_name):
    """Pull every additive RedElem factor of a product out over the whole product."""
    reds = [a for a in node.args if a.op == "red" and a.val[0] == "add"]
    if not reds:
        return node
    others = [a for a in node.args if not (a.op == "red" and a.val[0] == "add")]
    taken = _free_in(node.args)
    pairs = []
    bodies = []
    for r in reds:
        r = _rename_bound(r, taken, fresh_name)
        _, syms, sizes, body = T.red_parts(r)
        taken |= set(syms)
        pairs.extend(zip(syms, sizes))
        bodies.append(body)
    return T.red("add", pairs, T.mul(*others, *bodies))
