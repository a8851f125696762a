"""Materialise a rule at concrete ranks.

Each aggregated axis ``x`` of a rank class at rank ``r`` becomes the named
axes ``x.0 .. x.{r-1}``.  Maps become per-axis symbol families named
``<map>.<axis>.<task>``; derived maps become terms over those symbols.
Axes of one rank class are related positionally (``x.k <-> y.k``), which is
also how ``relabel`` is expanded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import exprlang
from . import ir
from . import terms as T
from .errors import RankZero, RClassMismatch, UndeclaredIdentifier


@dataclass(frozen=True)
class SymInfo:
    name: str
    base: str
    role: str  # size | attr | index | access | fresh | token | copy
    aggaxis: Optional[str] = None
    named_axis: Optional[str] = None
    position: Optional[int] = None


@dataclass(frozen=True)
class TensorSig:
    name: str
    axes: tuple
    shape: ir.Map
    elem: str


@dataclass
class InstantiatedRule:
    rule: ir.RewriteRule
    inst: "Instantiation"
    lhs: ir.Expr
    rhs: ir.Expr
    pre: T.Term
    env: dict
    hints: list = field(default_factory=list)


@dataclass(frozen=True)
class InstHint:
    lhs: tuple  # index map names
    rhs: tuple
    relation: T.Term


class Instantiation:
    def __init__(self, rule, ranks, tag="t0"):
        self.rule = rule
        self.tag = tag
        self.ranks = {}
        for rc in rule.rclasses:
            if rc not in ranks:
                raise RankZero(f"no rank given for rclass {rc!r}")
            r = int(ranks[rc])
            if r < 1:
                raise RankZero(f"rclass {rc!r} requested at rank {r}")
            self.ranks[rc] = r
        self.expansion = {}
        self.named_axes = {}
        self.parent = {}
        for name, agg in rule.axes.items():
            ids = [f"{name}.{k}" for k in range(self.ranks[agg.rclass])]
            self.expansion[name] = ids
            for k, i in enumerate(ids):
                self.named_axes[i] = ir.NamedAxis(i, f"{name}[{k}]", name)
                self.parent[i] = name
        self.size_maps = {s for t in rule.tensors.values() for _, s in t.shape}
        self.info = {}
        self._terms = {}
        self._fresh = {}

    # -- symbols -----------------------------------------------------------

    def _register(self, name, **kw):
        self.info[name] = SymInfo(name=name, **kw)

    def map_term(self, mapname, named_axis):
        key = (mapname, named_axis)
        hit = self._terms.get(key)
        if hit is not None:
            return hit
        decl = self.rule.maps.get(mapname)
        if decl is None:
            raise UndeclaredIdentifier(f"map {mapname!r} is not declared")
        agg = self.parent[named_axis]
        if decl.axis != agg:
            raise UndeclaredIdentifier(f"map {mapname!r} has no entry for axis {named_axis}")
        if decl.definition is not None:
            term = exprlang.to_term(decl.definition, lambda r: self.map_term(r, named_axis))
        else:
            name = f"{mapname}.{named_axis}.{self.tag}"
            role = "size" if mapname in self.size_maps else decl.role
            self._register(name, base=mapname, role=role, aggaxis=agg, named_axis=named_axis,
                           position=self.expansion[agg].index(named_axis))
            term = T.sym(name)
        self._terms[key] = term
        return term

    def fresh(self, base, named_axis=None, role="fresh", kind=T.INT):
        """A symbol not used anywhere else in this task."""
        stem = f"{base}.{named_axis}.{self.tag}" if named_axis else f"{base}.{self.tag}"
        n = self._fresh.get(stem, 0)
        self._fresh[stem] = n + 1
        name = stem if n == 0 else f"{stem}~{n}"
        while name in self.info:
            n += 1
            self._fresh[stem] = n + 1
            name = f"{stem}~{n}"
        agg = self.parent.get(named_axis) if named_axis else None
        pos = self.expansion[agg].index(named_axis) if agg else None
        self._register(name, base=base, role=role, aggaxis=agg, named_axis=named_axis, position=pos)
        return T.sym(name, kind)

    def rclass_of_named(self, named_axis):
        return self.rule.axes[self.parent[named_axis]].rclass

    def bijection(self, x0, x1):
        """Canonical positional bijection between two same-class aggregated axes."""
        if self.rule.axes[x0].rclass != self.rule.axes[x1].rclass:
            raise RClassMismatch(f"{x0!r} and {x1!r} are in different rclasses")
        return dict(zip(self.expansion[x0], self.expansion[x1]))

    # -- attribute conversion ---------------------------------------------

    def attr_map(self, ref):
        entries = []
        for agg, v in ref.entries:
            for ax in self.expansion[agg]:
                entries.append((ax, self.map_term(v, ax) if isinstance(v, str) else T.lit(v)))
        return ir.Map(entries)

    def convert(self, v):
        if isinstance(v, ir.AttrRef):
            return self.attr_map(v)
        if isinstance(v, ir.AxisRef):
            out = []
            for a in v.axes:
                out.extend(self.expansion[a])
            return frozenset(out)
        if isinstance(v, ir.RelabelRef):
            pairs = []
            for a, b in v.pairs:
                pairs.extend(self.bijection(a, b).items())
            return tuple(sorted(pairs))
        return v

    def formula(self, f):
        def atom(a):
            _, op, lhs, rhs = a
            names = exprlang.refs(a)
            axes = {self.rule.map_axis(n) for n in names}
            if not axes:
                return exprlang.cmp_term(op, exprlang.to_term(lhs, None), exprlang.to_term(rhs, None))
            (agg,) = axes
            parts = []
            for ax in self.expansion[agg]:
                res = lambda n, ax=ax: self.map_term(n, ax)
                parts.append(exprlang.cmp_term(op, exprlang.to_term(lhs, res), exprlang.to_term(rhs, res)))
            return T.and_(*parts)

        return exprlang.formula_term(f, atom)

    def tensor_sig(self, name):
        decl = self.rule.tensors[name]
        entries = []
        for agg, size in decl.shape:
            for ax in self.expansion[agg]:
                entries.append((ax, self.map_term(size, ax)))
        shape = ir.Map(entries)
        return TensorSig(name, shape.domain, shape, ir.ELEM_KINDS[decl.elem])


def instantiate(rule, ranks, tag="t0"):
    inst = Instantiation(rule, ranks, tag)
    lhs = ir.map_attrs(rule.lhs, inst.convert)
    rhs = ir.map_attrs(rule.rhs, inst.convert)
    env = {name: inst.tensor_sig(name) for name in rule.tensors}
    pre = T.and_(*(inst.formula(p.formula) for p in rule.preconditions))
    hints = [InstHint(tuple(h.lhs), tuple(h.rhs), inst.formula(h.relation)) for h in rule.si_hints]
    return InstantiatedRule(rule, inst, lhs, rhs, pre, env, hints)
