"""Reference interpreter over concrete tensors, and the differential tester.

This is deliberately a second implementation of the operator semantics:
it works on whole numpy object arrays (exact Python ints, ``Fraction`` for
reals) and checks side conditions directly on concrete numbers, sharing
nothing with the symbolic evaluator beyond the expression tree.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import analysis
from . import instantiate as inst_mod
from . import ir
from . import symeval
from . import terms as T
from .errors import (AxesMismatch, EvaluationTooLarge, KindMismatch, NonSingletonAxis, SamplingExhausted,
                     UnsupportedOp, ValidityViolation)

# elements one intermediate array (or one conv's multiply count) may reach
WORK_LIMIT = 4_000_000


class ConcreteTensor:
    """Named-axis tensor; ``data`` dimensions follow the sorted ``axes`` tuple."""

    __slots__ = ("axes", "data", "elem")

    def __init__(self, axes, data, elem=T.INT):
        axes = tuple(axes)
        data = np.asarray(data, dtype=object)
        if data.ndim != len(axes):
            raise ValueError(f"{len(axes)} axes but data has {data.ndim} dimensions")
        order = sorted(range(len(axes)), key=lambda k: axes[k])
        self.axes = tuple(axes[k] for k in order)
        self.data = np.transpose(data, order) if order != list(range(len(axes))) else data
        self.elem = elem

    @property
    def sizes(self):
        return dict(zip(self.axes, self.data.shape))

    def at(self, access):
        return self.data[tuple(access[a] for a in self.axes)]

    def points(self):
        for idx in itertools.product(*(range(n) for n in self.data.shape)):
            yield dict(zip(self.axes, idx))

    def __eq__(self, other):
        return (isinstance(other, ConcreteTensor) and self.axes == other.axes
                and self.data.shape == other.data.shape and bool(np.all(self.data == other.data)))

    def __repr__(self):
        return f"ConcreteTensor(axes={self.axes}, sizes={self.data.shape}, elem={self.elem})"

    def to_json(self):
        return {"axes": list(self.axes), "sizes": list(self.data.shape),
                "data": [_elem_json(v) for v in self.data.flat]}


def _elem_json(v):
    if isinstance(v, Fraction):
        return str(v) if v.denominator != 1 else int(v)
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    return int(v)


def _require(ok, what):
    if not ok:
        raise ValidityViolation(what)


def _obj(a):
    out = np.empty(np.shape(a), dtype=object)
    out[...] = a
    return out


def _cast(value, elem):
    if elem == T.BOOL:
        return bool(value)
    if elem == T.REAL:
        return Fraction(value)
    return int(value)


class Interpreter:
    def __init__(self, env, attrs):
        self.env = env
        self.attrs = attrs

    def num(self, term):
        return T.evaluate(term, self.attrs)

    def vals(self, m):
        return {a: self.num(v) for a, v in m.items()}

    def run(self, e):
        method = getattr(self, "_" + e.opname, None)
        if method is None:
            raise UnsupportedOp(e.opname)
        return method(e)

    # leaves

    def _var(self, e):
        return self.env[e.name]

    def _const(self, e):
        sizes = self.vals(e.shape)
        for a, n in sizes.items():
            _require(n >= 0, f"const size {a} >= 0")
        axes = sorted(sizes)
        data = np.full([sizes[a] for a in axes], _cast(e.value, ir.ELEM_KINDS[e.elem]), dtype=object)
        return ConcreteTensor(axes, data, ir.ELEM_KINDS[e.elem])

    def _iota(self, e):
        sizes = self.vals(e.shape)
        (ax,) = tuple(e.axis) if len(e.axis) == 1 else _bad_singleton(e.axis)
        for a, n in sizes.items():
            _require(n >= 0, f"iota size {a} >= 0")
        axes = sorted(sizes)
        grid = np.indices([sizes[a] for a in axes], dtype=np.int64)[axes.index(ax)]
        return ConcreteTensor(axes, _obj(grid.astype(object)), T.INT)

    def _expand(self, e):
        t = self.run(e.arg)
        extra = self.vals(e.shape)
        if set(extra) & set(t.axes):
            raise AxesMismatch("expand over an existing axis")
        for a, n in extra.items():
            _require(n >= 0, f"expand size {a} >= 0")
        sizes = dict(t.sizes)
        sizes.update(extra)
        axes = sorted(sizes)
        return ConcreteTensor(axes, np.broadcast_to(_lift(t, axes), [sizes[a] for a in axes]).copy(), t.elem)

    # elementwise

    def _binary(self, e):
        a, b = self.run(e.lhs), self.run(e.rhs)
        _same_axes(a, b)
        if a.elem != b.elem:
            raise KindMismatch("binary operands differ in element kind")
        for ax in a.axes:
            _require(a.sizes[ax] == b.sizes[ax], f"binary size {ax} agrees")
        x, y = a.data, b.data
        op = e.op
        fn = {
            "add": lambda p, q: p + q, "sub": lambda p, q: p - q, "mul": lambda p, q: p * q,
            "max": max, "min": min, "and": lambda p, q: bool(p and q), "or": lambda p, q: bool(p or q),
            "eq": lambda p, q: bool(p == q), "ne": lambda p, q: bool(p != q), "lt": lambda p, q: bool(p < q),
            "le": lambda p, q: bool(p <= q), "gt": lambda p, q: bool(p > q), "ge": lambda p, q: bool(p >= q),
        }[op]
        out = np.frompyfunc(fn, 2, 1)(x, y) if x.size else np.empty(x.shape, dtype=object)
        elem = T.BOOL if op in ("and", "or", "eq", "ne", "lt", "le", "gt", "ge") else a.elem
        return ConcreteTensor(a.axes, _obj(out), elem)

    def _select(self, e):
        p, a, b = self.run(e.pred), self.run(e.on_true), self.run(e.on_false)
        _same_axes(p, a, b)
        for ax in a.axes:
            _require(p.sizes[ax] == a.sizes[ax] == b.sizes[ax], f"select size {ax} agrees")
        out = np.where(p.data.astype(bool), a.data, b.data) if a.data.size else a.data.copy()
        return ConcreteTensor(a.axes, _obj(out), a.elem)

    def _clamp(self, e):
        lo, t, hi = self.run(e.lo), self.run(e.arg), self.run(e.hi)
        _same_axes(lo, t, hi)
        for ax in t.axes:
            _require(lo.sizes[ax] == t.sizes[ax] == hi.sizes[ax], f"clamp size {ax} agrees")
        out = t.data.copy()
        for idx in np.ndindex(*t.data.shape):
            out[idx] = min(max(t.data[idx], lo.data[idx]), hi.data[idx])
        return ConcreteTensor(t.axes, out, t.elem)

    # padding and slicing

    def _scatter_pad(self, t, value, low, high, interior, what):
        """Place ``t`` into a fresh array, axis by axis, cropping what falls outside."""
        out_sizes = []
        src_sel, dst_sel = [], []
        for ax, n in zip(t.axes, t.data.shape):
            lo, hi, gap = low[ax], high[ax], interior[ax]
            _require(gap >= 0, f"{what} interior {ax} >= 0")
            size = lo + n + (n - 1) * gap + hi
            _require(size >= 0, f"{what} size {ax} >= 0")
            src, dst = [], []
            for j in range(n):
                p = lo + j * (gap + 1)
                if 0 <= p < size:
                    src.append(j)
                    dst.append(p)
            out_sizes.append(size)
            src_sel.append(src)
            dst_sel.append(dst)
        _within_limit(out_sizes, what)
        out = np.full(out_sizes, _cast(value, t.elem), dtype=object)
        if all(src_sel):
            out[np.ix_(*dst_sel)] = t.data[np.ix_(*src_sel)]
        return ConcreteTensor(t.axes, out, t.elem)

    def _pad_low(self, e):
        t = self.run(e.arg)
        low = self.vals(e.low)
        zero = {a: 0 for a in t.axes}
        return self._scatter_pad(t, e.value, low, zero, zero, "pad_low")

    def _pad(self, e):
        t = self.run(e.arg)
        return self._scatter_pad(t, e.value, self.vals(e.low), self.vals(e.high), self.vals(e.interior), "pad")

    def _slice(self, e):
        t = self.run(e.arg)
        start, end, stride = self.vals(e.start), self.vals(e.end), self.vals(e.stride)
        sel = []
        for ax in t.axes:
            _require(start[ax] >= 0, f"slice start {ax} >= 0")
            _require(start[ax] <= end[ax], f"slice start {ax} <= end")
            _require(end[ax] <= t.sizes[ax], f"slice end {ax} <= size")
            _require(stride[ax] > 0, f"slice stride {ax} > 0")
            sel.append(slice(start[ax], end[ax], stride[ax]))
        return ConcreteTensor(t.axes, t.data[tuple(sel)].copy(), t.elem)

    def _dy_slice(self, e):
        t = self.run(e.arg)
        start, size = self.vals(e.start), self.vals(e.size)
        sel = []
        for ax in t.axes:
            _require(start[ax] + size[ax] <= t.sizes[ax], f"dy_slice {ax} fits")
            _require(size[ax] > 0, f"dy_slice size {ax} > 0")
            _require(start[ax] >= 0, f"dy_slice start {ax} >= 0")
            sel.append(slice(start[ax], start[ax] + size[ax]))
        return ConcreteTensor(t.axes, t.data[tuple(sel)].copy(), t.elem)

    def _dyup_slice(self, e):
        t, u = self.run(e.arg), self.run(e.update)
        _same_axes(t, u)
        start = self.vals(e.start)
        sel = []
        for ax in t.axes:
            n = u.sizes[ax]
            _require(start[ax] + n <= t.sizes[ax], f"dyup_slice {ax} fits")
            _require(n > 0, f"dyup_slice update {ax} > 0")
            _require(start[ax] >= 0, f"dyup_slice start {ax} >= 0")
            sel.append(slice(start[ax], start[ax] + n))
        out = t.data.copy()
        out[tuple(sel)] = u.data
        return ConcreteTensor(t.axes, out, t.elem)

    # structure

    def _reduce(self, e):
        t = self.run(e.arg)
        dims = [ax for ax in e.indices.domain]
        if not set(dims) <= set(t.axes):
            raise AxesMismatch("reduce over a missing axis")
        pos = tuple(t.axes.index(a) for a in dims)
        if e.op in ("max", "min"):
            for a in dims:
                _require(t.sizes[a] > 0, f"reduce {e.op} over non-empty {a}")
        keep = [a for a in t.axes if a not in dims]
        moved = np.moveaxis(t.data, pos, tuple(range(len(keep), len(t.axes))))
        flat = moved.reshape([t.sizes[a] for a in keep] + [-1]) if moved.size else \
            np.empty([t.sizes[a] for a in keep] + [0], dtype=object)
        zero = Fraction(0) if t.elem == T.REAL else 0
        fold = {"add": lambda xs: sum(xs, zero), "max": max, "min": min}[e.op]
        out = np.empty([t.sizes[a] for a in keep], dtype=object)
        for idx in np.ndindex(*out.shape):
            out[idx] = fold(list(flat[idx]))
        return ConcreteTensor(keep, out, t.elem)

    def _relabel(self, e):
        t = self.run(e.arg)
        ren = dict(e.mapping)
        new = [ren.get(a, a) for a in t.axes]
        if len(set(new)) != len(new) or not set(ren) <= set(t.axes):
            raise AxesMismatch("bad relabel")
        return ConcreteTensor(new, t.data, t.elem)

    def _concat(self, e):
        a, b = self.run(e.lhs), self.run(e.rhs)
        if len(e.axis) != 1:
            raise NonSingletonAxis("concat")
        (x,) = tuple(e.axis)
        _same_axes(a, b)
        for ax in a.axes:
            if ax != x:
                _require(a.sizes[ax] == b.sizes[ax], f"concat size {ax} agrees")
        return ConcreteTensor(a.axes, np.concatenate([a.data, b.data], axis=a.axes.index(x)), a.elem)

    def _reverse(self, e):
        t = self.run(e.arg)
        axes = tuple(t.axes.index(a) for a in sorted(e.axes))
        return ConcreteTensor(t.axes, np.flip(t.data, axes).copy() if axes else t.data, t.elem)

    # contractions

    def _dot(self, e):
        a, b = self.run(e.lhs), self.run(e.rhs)
        contract, batch = set(e.contract), set(e.batch)
        common = set(a.axes) & set(b.axes)
        if contract & batch or contract | batch != common:
            raise AxesMismatch("dot axes")
        return _contract(a, b, contract)

    def _conv_base(self, e):
        return self._direct_conv(self.run(e.input), self.run(e.weight), set(e.feature), self.vals(e.stride))

    def _direct_conv(self, i, w, feature, stride):
        common = set(i.axes) & set(w.axes)
        if not feature <= common:
            raise AxesMismatch("conv feature axes")
        spatial = sorted(common - feature)
        for ax in spatial:
            _require(stride[ax] > 0, f"conv stride {ax} > 0")
            _require(i.sizes[ax] >= w.sizes[ax], f"conv window {ax} fits")
        for ax in feature:
            _require(i.sizes[ax] == w.sizes[ax], f"conv feature {ax} agrees")
        out_sp = {ax: (i.sizes[ax] - w.sizes[ax]) // stride[ax] + 1 for ax in spatial}
        batch = sorted(a for a in i.axes if a not in w.axes)
        outs = sorted(a for a in w.axes if a not in i.axes)
        fa = sorted(feature)
        window = [w.sizes[a] for a in spatial]
        shape = [i.sizes[a] for a in batch] + [out_sp[a] for a in spatial] + [w.sizes[a] for a in outs]
        _within_limit(shape, "conv output")
        _within_limit(shape + [i.sizes[a] for a in fa] + window, "conv")
        idata = np.transpose(i.data, [i.axes.index(a) for a in batch + fa + spatial])
        wdata = np.transpose(w.data, [w.axes.index(a) for a in outs + fa + spatial])
        zero = Fraction(0) if i.elem == T.REAL else 0
        if 0 in shape or 0 in window or 0 in [i.sizes[a] for a in fa]:
            return ConcreteTensor(batch + spatial + outs, np.full(shape, zero, dtype=object), i.elem)
        fast = _as_int64(idata, wdata) if i.elem == T.INT else None
        if fast is not None:
            idata, wdata = fast
        nb, nf, ns = len(batch), len(fa), len(spatial)
        if ns:
            pos = tuple(range(nb + nf, nb + nf + ns))
            view = np.lib.stride_tricks.sliding_window_view(idata, window, axis=pos)
            view = view[(slice(None),) * (nb + nf) + tuple(slice(None, None, stride[a]) for a in spatial)]
        else:
            view = idata
        # view: batch, feature, output positions, window offsets
        sum_i = list(range(nb, nb + nf)) + list(range(nb + nf + ns, nb + nf + 2 * ns))
        sum_w = list(range(len(outs), len(outs) + nf + ns))
        acc = np.tensordot(view, wdata, axes=(sum_i, sum_w))
        if acc.dtype != object:
            acc = acc.astype(object)  # back to exact Python ints
        elif not acc.shape:
            acc = np.asarray(acc, dtype=object)
        return ConcreteTensor(batch + spatial + outs, acc, i.elem)

    def _conv(self, e):
        i, w = self.run(e.input), self.run(e.weight)
        feature = set(e.feature)
        spatial = (set(i.axes) & set(w.axes)) - feature
        low, high = self.vals(e.low), self.vals(e.high)
        ldil, rdil = self.vals(e.lhs_dilation), self.vals(e.rhs_dilation)
        zi = {a: 0 for a in i.axes}
        pi = self._scatter_pad(i, 0, {**zi, **low}, {**zi, **high},
                               {**zi, **{a: ldil[a] - 1 for a in spatial}}, "conv input")
        zw = {a: 0 for a in w.axes}
        pw = self._scatter_pad(w, 0, zw, zw, {**zw, **{a: rdil[a] - 1 for a in spatial}}, "conv weight")
        return self._direct_conv(pi, pw, feature, self.vals(e.stride))


def _bad_singleton(axes):
    raise NonSingletonAxis(f"expected a single axis, got {sorted(axes)}")


def _same_axes(*ts):
    first = set(ts[0].axes)
    for t in ts[1:]:
        if set(t.axes) != first:
            raise AxesMismatch(f"axis sets {sorted(first)} and {sorted(t.axes)} differ")


def _lift(t, axes):
    """View of ``t.data`` with dimensions in ``axes`` order, size 1 where ``t`` lacks the axis."""
    present = [a for a in axes if a in t.axes]
    perm = [t.axes.index(a) for a in present]
    data = np.transpose(t.data, perm)
    shape = [t.sizes[a] if a in t.axes else 1 for a in axes]
    return data.reshape(shape)


def _within_limit(shape, what):
    n = 1
    for k in shape:
        n *= max(int(k), 0)
    if n > WORK_LIMIT:
        raise EvaluationTooLarge(f"{what} needs {n} elements (limit {WORK_LIMIT})")


def _as_int64(x, y):
    """``(x, y)`` as int64 arrays when every sum of products of their entries fits, else None."""
    try:
        xi, yi = x.astype(np.int64), y.astype(np.int64)
    except (OverflowError, TypeError):
        return None
    if xi.size and yi.size:
        # each output sums at most y.size products
        bound = int(np.abs(xi).max()) * int(np.abs(yi).max()) * yi.size
        if bound >= 2 ** 62:
            return None
    return xi, yi


def _contract(a, b, contract):
    if a.elem != b.elem or a.elem not in T.NUMERIC:
        raise KindMismatch("dot needs matching numeric operands")
    axes = sorted(set(a.axes) | set(b.axes))
    for ax in set(a.axes) & set(b.axes):
        _require(a.sizes[ax] == b.sizes[ax], f"dot size {ax} agrees")
    prod = _lift(a, axes) * _lift(b, axes)
    keep = [x for x in axes if x not in contract]
    sizes = {**a.sizes, **b.sizes}
    prod = np.broadcast_to(prod, [sizes[x] for x in axes])
    zero = Fraction(0) if a.elem == T.REAL else 0
    out = np.empty([sizes[x] for x in keep], dtype=object)
    red = tuple(axes.index(x) for x in sorted(contract))
    moved = np.moveaxis(prod, red, tuple(range(len(keep), len(axes))))
    for idx in np.ndindex(*out.shape):
        # with nothing contracted moved[idx] is a single element, not an array
        out[idx] = sum(np.asarray(moved[idx], dtype=object).flat, zero)
    return ConcreteTensor(keep, out, a.elem)


def eval_concrete(expr, env, attrs):
    """Evaluate an instantiated expression; raises :class:`ValidityViolation` on bad inputs."""
    return Interpreter(env, attrs).run(expr)


# ------------------------------------------------------------ differential

@dataclass
class Mismatch:
    ranks: dict
    model: dict
    tensors: dict
    access: dict = None
    lhs_value: object = None
    rhs_value: object = None
    reason: str = "value"  # value | rhs-invalid | shape

    def to_json(self):
        return {
            "ranks": dict(self.ranks),
            "model": dict(sorted(self.model.items())),
            "tensors": {k: v.to_json() for k, v in sorted(self.tensors.items())},
            "access": dict(self.access) if self.access else None,
            "lhs_value": None if self.lhs_value is None else _elem_json(self.lhs_value),
            "rhs_value": None if self.rhs_value is None else _elem_json(self.rhs_value),
            "reason": self.reason,
        }


@dataclass
class DiffReport:
    rule: str
    ranks: dict
    trials: int
    attempts: int
    mismatches: int = 0
    first: Mismatch = None
    seed: int = 0
    notes: list = field(default_factory=list)
    oversized: int = 0  # draws skipped because evaluating them would exceed WORK_LIMIT

    @property
    def ok(self):
        return self.mismatches == 0

    def to_json(self):
        return {"rule": self.rule, "ranks": dict(self.ranks), "trials": self.trials, "attempts": self.attempts,
                "mismatches": self.mismatches, "oversized": self.oversized, "seed": self.seed,
                "first": self.first.to_json() if self.first else None}


def compare(lhs_expr, rhs_expr, env, model):
    """Run both sides; None when they agree, else a :class:`Mismatch` without ranks.

    Raises :class:`ValidityViolation` when the left side itself is invalid.
    """
    left = eval_concrete(lhs_expr, env, model)
    try:
        right = eval_concrete(rhs_expr, env, model)
    except ValidityViolation as exc:
        return Mismatch({}, dict(model), dict(env), reason=f"rhs-invalid: {exc.atom}")
    if set(left.axes) != set(right.axes) or left.sizes != right.sizes:
        return Mismatch({}, dict(model), dict(env), reason="shape")
    # axes are stored sorted, so the two arrays line up index for index
    diff = np.argwhere(np.asarray(left.data != right.data, dtype=bool).reshape(left.data.shape))
    if not len(diff):
        return None
    point = dict(zip(left.axes, (int(k) for k in diff[0])))
    return Mismatch({}, dict(model), dict(env), point, left.at(point), right.at(point))


class _Sampler:
    """Draws symbol valuations guided by the precondition and LHS side conditions.

    Equalities are solved for one symbol where possible, unary atoms narrow
    per-symbol ranges, and atoms confined to one named axis are checked
    while that axis's symbols are drawn; everything else is plain rejection.
    """

    def __init__(self, ir_, size_cap, rng):
        self.ir = ir_
        self.rng = rng
        inst = ir_.inst
        _, lv = symeval.sym_eval(ir_.lhs, ir_.env, inst.fresh)
        cond = T.and_(ir_.pre, lv)
        self.cond = cond
        self.subst = analysis._equality_substitution(cond, inst, list(ir_.rule.maps))
        reduced = T.substitute(cond, self.subst) if self.subst else cond
        names = set()
        for t in [cond] + [v for v in self.subst.values()]:
            names |= {s.val for s in T.free_symbols(t)}
        names |= _expr_symbols(ir_.lhs) | _expr_symbols(ir_.rhs)
        for sig in ir_.env.values():
            for v in sig.shape.values():
                names |= {s.val for s in T.free_symbols(v)}
        names = {n for n in names if inst.info.get(n) is None or inst.info[n].role != "index"}
        dependent = {s.val for s in self.subst}
        self.free = sorted(names - dependent)
        self.role = {n: (inst.info[n].role if n in inst.info else "attr") for n in self.free}
        self.group = {n: (inst.info[n].named_axis if n in inst.info else None) for n in self.free}
        lo_hi = {}
        for n in self.free:
            if self.role[n] == "size":
                lo_hi[n] = [0, size_cap]
            else:
                lo_hi[n] = [-size_cap, size_cap]
        self.local = {}
        self.global_atoms = []
        for atom in T.conjuncts(reduced):
            fs = T.free_symbols(atom)
            if len(fs) == 1:
                (s,) = fs
                if s.val in lo_hi and _narrow(atom, s, lo_hi[s.val]):
                    continue
            groups = {self.group.get(s.val) for s in fs}
            if len(groups) == 1:
                self.local.setdefault(groups.pop(), []).append(atom)
            else:
                self.global_atoms.append(atom)
        self.ranges = lo_hi
        self.groups = {}
        for n in self.free:
            self.groups.setdefault(self.group[n], []).append(n)

    def draw(self, tries=64):
        model = {}
        for g in sorted(self.groups, key=lambda x: (x is None, x or "")):
            names = self.groups[g]
            atoms = self.local.get(g, [])
            for _ in range(tries):
                for n in names:
                    lo, hi = self.ranges[n]
                    model[n] = self.rng.randint(lo, hi) if lo <= hi else lo
                if _holds(atoms, model):
                    break
            else:
                return None
        for s, v in self.subst.items():
            try:
                model[s.val] = T.evaluate(v, model)
            except T.EvalError:
                return None
        if not _holds([self.cond], model):
            return None
        return model


def _narrow(atom, s, bounds):
    """Fold a single-symbol linear atom into ``bounds``; False when it is not of that shape."""
    p, c = atom.args if atom.op in ("ge", "eq") else (None, None)
    if p is None:
        return False
    if p is s:
        coef = 1
    elif p.op == "mul" and len(p.args) == 2 and p.args[0].op == "lit" and p.args[1] is s:
        coef = p.args[0].val
    else:
        return False
    k = c.val
    if atom.op == "eq":
        if k % coef:
            bounds[0], bounds[1] = 1, 0
            return True
        v = k // coef
        bounds[0] = max(bounds[0], v)
        bounds[1] = min(bounds[1], v)
        if bounds[0] > bounds[1]:
            bounds[0] = bounds[1] = v
        return True
    if coef > 0:
        bounds[0] = max(bounds[0], -((-k) // coef))
    else:
        bounds[1] = min(bounds[1], k // coef)
    if bounds[0] > bounds[1]:
        # the atom forces values outside the sampling window; stay feasible, just wider
        if coef > 0:
            bounds[1] = bounds[0]
        else:
            bounds[0] = bounds[1]
    return True


def _holds(atoms, model):
    try:
        return all(T.evaluate(a, model) for a in atoms)
    except T.EvalError:
        return False


def _expr_symbols(e):
    out = set()
    for node in ir.subexprs(e):
        for f in node.__dataclass_fields__:
            if f in node.CHILDREN:
                continue
            v = getattr(node, f)
            if isinstance(v, ir.Map):
                for t in v.values():
                    out |= {s.val for s in T.free_symbols(t)}
    return out


def random_tensor(sig, model, rng, value_cap):
    sizes = [T.evaluate(sig.shape[a], model) for a in sig.axes]
    data = np.empty(sizes, dtype=object)
    for idx in np.ndindex(*sizes):
        if sig.elem == T.BOOL:
            data[idx] = rng.random() < 0.5
        elif sig.elem == T.REAL:
            data[idx] = Fraction(rng.randint(-value_cap, value_cap), rng.choice((1, 1, 2)))
        else:
            data[idx] = rng.randint(-value_cap, value_cap)
    return ConcreteTensor(sig.axes, data, sig.elem)


def _try(ir_, model, env):
    """``(mismatch or None, outcome)`` with outcome ``valid``, ``invalid`` or ``oversized``."""
    try:
        return compare(ir_.lhs, ir_.rhs, env, model), "valid"
    except ValidityViolation:
        return None, "invalid"
    except EvaluationTooLarge:
        return None, "oversized"


def differential_test(rule, ranks, trials=200, seed=0, size_cap=4, value_cap=4, budget=50, shrink=True,
                      stop_at_first=True):
    """Sample valid concrete instances of ``rule`` at ``ranks`` and compare both sides."""
    rng = random.Random(f"{rule.name}|{sorted(ranks.items())}|{seed}")
    ir_ = inst_mod.instantiate(rule, ranks, "dt")
    sampler = _Sampler(ir_, size_cap, rng)
    report = DiffReport(rule.name, dict(ranks), 0, 0, seed=seed)
    limit = budget * trials
    while report.trials < trials:
        if report.attempts >= limit:
            raise SamplingExhausted(
                f"{rule.name} at {ranks}: {report.trials} valid samples after {report.attempts} attempts")
        report.attempts += 1
        model = sampler.draw()
        if model is None:
            continue
        env = {name: random_tensor(sig, model, rng, value_cap) for name, sig in ir_.env.items()}
        mm, outcome = _try(ir_, model, env)
        if outcome == "oversized":
            report.oversized += 1
        if outcome != "valid":
            continue
        report.trials += 1
        if mm is not None:
            report.mismatches += 1
            if report.first is None:
                if shrink:
                    mm = _shrink(ir_, sampler, mm)
                mm.ranks = dict(ranks)
                report.first = mm
            if stop_at_first:
                break
    return report


def _shrink(ir_, sampler, mm):
    """Greedy: lower free symbols toward zero (sizes first), then zero tensor entries."""
    model, env = dict(mm.model), dict(mm.tensors)
    best = mm
    order = sorted(sampler.free, key=lambda n: (sampler.role[n] != "size", n))

    def attempt(new_model, new_env):
        full = dict(new_model)
        for s, v in sampler.subst.items():
            try:
                full[s.val] = T.evaluate(v, full)
            except T.EvalError:
                return None
        if not _holds([sampler.cond], full):
            return None
        try:
            env2 = {n: _fit(new_env[n], sig, full) for n, sig in ir_.env.items()}
        except ValueError:
            return None
        res, outcome = _try(ir_, full, env2)
        return res if outcome == "valid" else None

    changed = True
    while changed:
        changed = False
        for n in order:
            v = model[n]
            for cand in _toward_zero(v):
                trial = dict(model)
                trial[n] = cand
                res = attempt(trial, env)
                if res is not None:
                    model, env, best = trial, res.tensors, res
                    changed = True
                    break
    for name in sorted(env):
        t = env[name]
        for idx in np.ndindex(*t.data.shape):
            if t.data[idx] == 0 or t.elem == T.BOOL:
                continue
            data = t.data.copy()
            data[idx] = _cast(0, t.elem)
            trial_env = dict(env)
            trial_env[name] = ConcreteTensor(t.axes, data, t.elem)
            res = attempt(model, trial_env)
            if res is not None:
                env, best = res.tensors, res
                t = env[name]
    return best


def _toward_zero(v):
    if v == 0:
        return []
    step = 1 if v > 0 else -1
    out = [0] if abs(v) > 1 else []
    out.append(v - step)
    return out


def _fit(t, sig, model):
    """Crop or zero-extend ``t`` to the sizes ``model`` gives ``sig``."""
    sizes = [T.evaluate(sig.shape[a], model) for a in sig.axes]
    if any(n < 0 for n in sizes):
        raise ValueError("negative size")
    data = np.full(sizes, _cast(0, sig.elem), dtype=object)
    common = tuple(slice(0, min(a, b)) for a, b in zip(sizes, t.data.shape))
    data[common] = t.data[common]
    return ConcreteTensor(sig.axes, data, sig.elem)
