"""Rank-polymorphic IR: axes, rank classes, maps, tensor expressions, rules."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Optional

from . import exprlang
from . import terms as T
from .errors import DomainMismatch, DuplicateDeclaration, UndeclaredIdentifier, RuleError

ELEM_KINDS = {"int": T.INT, "real": T.REAL, "bool": T.BOOL}


# ------------------------------------------------------------------ axes

@dataclass(frozen=True)
class RClass:
    name: str
    singleton: bool = False


@dataclass(frozen=True)
class AggAxis:
    name: str
    rclass: str


@dataclass(frozen=True)
class NamedAxis:
    id: str
    label: str
    parent: Optional[str] = None


# ------------------------------------------------------------------ maps

class Map:
    """Finite map from named-axis ids to terms, ordered by axis id."""

    __slots__ = ("_items",)

    def __init__(self, entries=()):
        if isinstance(entries, Map):
            self._items = entries._items
            return
        if isinstance(entries, dict):
            entries = entries.items()
        items = []
        for ax, v in entries:
            if not isinstance(v, T.Term):
                v = T.lit(v)
            items.append((ax, v))
        items.sort(key=lambda kv: kv[0])
        for (a, _), (b, _) in zip(items, items[1:]):
            if a == b:
                raise DomainMismatch(f"axis {a} listed twice")
        self._items = tuple(items)

    @property
    def domain(self):
        return tuple(a for a, _ in self._items)

    def items(self):
        return self._items

    def values(self):
        return tuple(v for _, v in self._items)

    def __getitem__(self, ax):
        for a, v in self._items:
            if a == ax:
                return v
        raise KeyError(ax)

    def __contains__(self, ax):
        return any(a == ax for a, _ in self._items)

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self.domain)

    def __eq__(self, other):
        return isinstance(other, Map) and self._items == other._items

    def __hash__(self):
        return hash(self._items)

    def __repr__(self):
        return "{" + ", ".join(f"{a}->{T.show(v)}" for a, v in self._items) + "}"

    def get(self, ax, default=None):
        for a, v in self._items:
            if a == ax:
                return v
        return default

    def restrict(self, axes):
        axes = set(axes)
        return Map([(a, v) for a, v in self._items if a in axes])

    def without(self, axes):
        axes = set(axes)
        return Map([(a, v) for a, v in self._items if a not in axes])

    def union(self, other):
        overlap = set(self.domain) & set(other.domain)
        if overlap:
            raise DomainMismatch(f"maps overlap on {sorted(overlap)}")
        return Map(self._items + other._items)

    def override(self, other):
        keep = [(a, v) for a, v in self._items if a not in other]
        return Map(keep + list(other.items()))

    def fmap(self, fn, *others):
        for o in others:
            if o.domain != self.domain:
                raise DomainMismatch(f"fmap over domains {self.domain} and {o.domain}")
        return Map([(a, fn(v, *(o[a] for o in others))) for a, v in self._items])

    def fold(self, pred, *others):
        for o in others:
            if o.domain != self.domain:
                raise DomainMismatch(f"fold over domains {self.domain} and {o.domain}")
        return T.and_(*(pred(v, *(o[a] for o in others)) for a, v in self._items))

    @staticmethod
    def const(axes, value):
        return Map([(a, value) for a in axes])


class AggMap:
    """Aggregated map: concrete axis set -> Map with that exact domain."""

    __slots__ = ("_entries",)

    def __init__(self, entries):
        if isinstance(entries, dict):
            entries = entries.items()
        norm = []
        seen = set()
        for key, inner in entries:
            key = frozenset(key)
            inner = inner if isinstance(inner, Map) else Map(inner)
            if set(inner.domain) != key:
                raise DomainMismatch(f"inner domain {inner.domain} differs from key {sorted(key)}")
            if key & seen:
                raise DomainMismatch(f"aggregated keys overlap on {sorted(key & seen)}")
            seen |= key
            norm.append((key, inner))
        norm.sort(key=lambda kv: sorted(kv[0]))
        self._entries = tuple(norm)

    def keys(self):
        return tuple(k for k, _ in self._entries)

    def items(self):
        return self._entries

    def __getitem__(self, key):
        key = frozenset(key)
        for k, v in self._entries:
            if k == key:
                return v
        raise KeyError(key)

    def __eq__(self, other):
        return isinstance(other, AggMap) and self._entries == other._entries

    def __hash__(self):
        return hash(self._entries)

    def __repr__(self):
        return "{" + ", ".join(f"{sorted(k)}: {v!r}" for k, v in self._entries) + "}"

    def flatten(self):
        out = Map()
        for _, inner in self._entries:
            out = out.union(inner)
        return out

    def restrict(self, axes):
        axes = set(axes)
        kept = []
        for k, inner in self._entries:
            sub = k & axes
            if sub:
                kept.append((sub, inner.restrict(sub)))
        return AggMap(kept)


def _same_structure(ms):
    keys = ms[0].keys()
    for m in ms[1:]:
        if m.keys() != keys:
            raise DomainMismatch("aggregated maps have different key structure")
    return keys


def agg_map_combine(fn, ms):
    """Pointwise combination of aggregated maps with identical structure."""
    ms = list(ms)
    keys = _same_structure(ms)
    out = []
    for k in keys:
        inners = [m[k] for m in ms]
        out.append((k, inners[0].fmap(fn, *inners[1:])))
    return AggMap(out)


def agg_map_fold(pred, ms):
    """Conjunction of ``pred`` over every named axis of every key."""
    ms = list(ms)
    keys = _same_structure(ms)
    parts = []
    for k in keys:
        inners = [m[k] for m in ms]
        parts.append(inners[0].fold(pred, *inners[1:]))
    return T.and_(*parts)


# ------------------------------------------------ abstract attribute refs

@dataclass(frozen=True)
class AttrRef:
    """Attribute aggregated map in an abstract rule: aggregated axis -> map name or int."""
    entries: tuple

    def axes(self):
        return tuple(a for a, _ in self.entries)


@dataclass(frozen=True)
class AxisRef:
    axes: tuple


@dataclass(frozen=True)
class RelabelRef:
    pairs: tuple


# ------------------------------------------------------ tensor expressions

@dataclass(frozen=True)
class Expr:
    CHILDREN = ()

    @property
    def opname(self):
        return OPNAMES[type(self)]

    def children(self):
        return tuple(getattr(self, f) for f in self.CHILDREN)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Const(Expr):
    value: Any
    shape: Any
    elem: str = "int"


@dataclass(frozen=True)
class Iota(Expr):
    shape: Any
    axis: Any


@dataclass(frozen=True)
class Expand(Expr):
    CHILDREN = ("arg",)
    arg: Expr
    shape: Any


BINARY_OPS = ("add", "sub", "mul", "max", "min", "and", "or", "eq", "ne", "lt", "le", "gt", "ge")


@dataclass(frozen=True)
class Binary(Expr):
    CHILDREN = ("lhs", "rhs")
    op: str
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True)
class PadLow(Expr):
    CHILDREN = ("arg",)
    arg: Expr
    value: Any
    low: Any


@dataclass(frozen=True)
class Pad(Expr):
    CHILDREN = ("arg",)
    arg: Expr
    value: Any
    low: Any
    high: Any
    interior: Any


@dataclass(frozen=True)
class Slice(Expr):
    CHILDREN = ("arg",)
    arg: Expr
    start: Any
    end: Any
    stride: Any


@dataclass(frozen=True)
class DySlice(Expr):
    CHILDREN = ("arg",)
    arg: Expr
    start: Any
    size: Any


@dataclass(frozen=True)
class DyUpSlice(Expr):
    CHILDREN = ("arg", "update")
    arg: Expr
    update: Expr
    start: Any


@dataclass(frozen=True)
class Reduce(Expr):
    CHILDREN = ("arg",)
    op: str
    arg: Expr
    indices: Any


@dataclass(frozen=True)
class Relabel(Expr):
    CHILDREN = ("arg",)
    arg: Expr
    mapping: Any


@dataclass(frozen=True)
class Concat(Expr):
    CHILDREN = ("lhs", "rhs")
    lhs: Expr
    rhs: Expr
    axis: Any


@dataclass(frozen=True)
class Dot(Expr):
    CHILDREN = ("lhs", "rhs")
    lhs: Expr
    rhs: Expr
    contract: Any
    batch: Any
    indices: Any = None


@dataclass(frozen=True)
class ConvBase(Expr):
    CHILDREN = ("input", "weight")
    input: Expr
    weight: Expr
    feature: Any
    stride: Any
    indices: Any = None


@dataclass(frozen=True)
class Conv(Expr):
    CHILDREN = ("input", "weight")
    input: Expr
    weight: Expr
    feature: Any
    low: Any
    high: Any
    lhs_dilation: Any
    rhs_dilation: Any
    stride: Any
    indices: Any = None


@dataclass(frozen=True)
class Reverse(Expr):
    CHILDREN = ("arg",)
    arg: Expr
    axes: Any


@dataclass(frozen=True)
class Select(Expr):
    CHILDREN = ("pred", "on_true", "on_false")
    pred: Expr
    on_true: Expr
    on_false: Expr


@dataclass(frozen=True)
class Clamp(Expr):
    CHILDREN = ("lo", "arg", "hi")
    lo: Expr
    arg: Expr
    hi: Expr


OPNAMES = {
    Var: "var", Const: "const", Iota: "iota", Expand: "expand", Binary: "binary",
    PadLow: "pad_low", Pad: "pad", Slice: "slice", DySlice: "dy_slice",
    DyUpSlice: "dyup_slice", Reduce: "reduce", Relabel: "relabel", Concat: "concat",
    Dot: "dot", ConvBase: "conv_base", Conv: "conv", Reverse: "reverse",
    Select: "select", Clamp: "clamp",
}
OPCLASSES = {v: k for k, v in OPNAMES.items()}


def subexprs(e):
    yield e
    for c in e.children():
        yield from subexprs(c)


def map_attrs(e, fn):
    """Rebuild ``e`` bottom-up, applying ``fn(value)`` to every non-child field."""
    kw = {}
    for f in dataclasses.fields(e):
        v = getattr(e, f.name)
        if f.name in e.CHILDREN:
            kw[f.name] = map_attrs(v, fn)
        elif f.name in ("op", "name", "elem"):
            kw[f.name] = v
        else:
            kw[f.name] = fn(v)
    return type(e)(**kw)


# ------------------------------------------------------------------ rules

@dataclass(frozen=True)
class MapDecl:
    name: str
    axis: str
    role: str = "attr"  # attr | index
    definition: Any = None  # parsed exprlang expression for derived maps
    source: Optional[str] = None


@dataclass(frozen=True)
class TensorDecl:
    name: str
    shape: tuple  # ((aggaxis, size map name), ...)
    elem: str = "int"

    @property
    def axes(self):
        return tuple(a for a, _ in self.shape)


@dataclass(frozen=True)
class SiHint:
    lhs: tuple
    rhs: tuple
    relation: Any
    source: str = ""


@dataclass(frozen=True)
class Precondition:
    formula: Any
    source: str = ""


@dataclass
class RewriteRule:
    name: str
    rclasses: dict
    axes: dict
    maps: dict
    tensors: dict
    lhs: Expr
    rhs: Expr
    preconditions: list = field(default_factory=list)
    si_hints: list = field(default_factory=list)
    description: str = ""

    def rclass_of(self, aggaxis):
        return self.axes[aggaxis].rclass

    def axes_of_rclass(self, rc):
        return [a for a, ax in self.axes.items() if ax.rclass == rc]

    def map_axis(self, name):
        try:
            return self.maps[name].axis
        except KeyError:
            raise UndeclaredIdentifier(f"map {name!r} is not declared") from None


def build_rule(name, rclasses, axes, maps, tensors, lhs, rhs, preconditions=(), si_hints=(), description=""):
    """Assemble and check a rule.  Declarations are lists of the dataclasses above."""
    rc = _unique(rclasses, "rclass")
    ax = _unique(axes, "axis")
    mp = _unique(maps, "map")
    ts = _unique(tensors, "tensor")
    for names in (set(rc) & set(ax), set(ax) & set(mp), set(mp) & set(ts), set(ax) & set(ts)):
        if names:
            raise DuplicateDeclaration(f"identifier declared twice across kinds: {sorted(names)}")
    rule = RewriteRule(name, rc, ax, mp, ts, lhs, rhs, list(preconditions), list(si_hints), description)
    _check_rule(rule)
    return rule


def _unique(decls, what):
    out = {}
    for d in decls:
        if d.name in out:
            raise DuplicateDeclaration(f"{what} {d.name!r} declared twice")
        out[d.name] = d
    return out


def _check_rule(rule):
    for a in rule.axes.values():
        if a.rclass not in rule.rclasses:
            raise UndeclaredIdentifier(f"axis {a.name!r} uses undeclared rclass {a.rclass!r}")
    for m in rule.maps.values():
        if m.axis not in rule.axes:
            raise UndeclaredIdentifier(f"map {m.name!r} lives on undeclared axis {m.axis!r}")
        if m.definition is not None:
            for r in exprlang.refs(m.definition):
                if rule.map_axis(r) != m.axis:
                    raise DomainMismatch(f"derived map {m.name!r} uses {r!r} from axis {rule.map_axis(r)!r}")
                if rule.maps[r].role == "index":
                    raise RuleError(f"derived map {m.name!r} refers to reduction index {r!r}")
    _check_definition_cycles(rule)
    for t in rule.tensors.values():
        if t.elem not in ELEM_KINDS:
            raise RuleError(f"tensor {t.name!r} has unknown element type {t.elem!r}")
        seen = set()
        for a, s in t.shape:
            if a not in rule.axes:
                raise UndeclaredIdentifier(f"tensor {t.name!r} uses undeclared axis {a!r}")
            if a in seen:
                raise DuplicateDeclaration(f"tensor {t.name!r} lists axis {a!r} twice")
            seen.add(a)
            if rule.map_axis(s) != a:
                raise DomainMismatch(f"size map {s!r} of {t.name!r} does not live on axis {a!r}")
    for side in (rule.lhs, rule.rhs):
        for e in subexprs(side):
            _check_node(rule, e)
    for p in rule.preconditions:
        for r in exprlang.refs(p.formula):
            rule.map_axis(r)
        exprlang.check_atom_domains(p.formula, rule.map_axis, p.source)
    for h in rule.si_hints:
        for n in tuple(h.lhs) + tuple(h.rhs):
            if rule.maps.get(n) is None or rule.maps[n].role != "index":
                from .errors import HintReferencesUnknownIndex
                raise HintReferencesUnknownIndex(f"hint names {n!r}, which is not a reduction index map")
        for r in exprlang.refs(h.relation):
            rule.map_axis(r)
        exprlang.check_atom_domains(h.relation, rule.map_axis, h.source)


def _check_definition_cycles(rule):
    state = {}

    def visit(n, trail):
        if state.get(n) == 2:
            return
        if state.get(n) == 1:
            raise RuleError(f"derived maps form a cycle: {' -> '.join(trail + [n])}")
        state[n] = 1
        d = rule.maps[n].definition
        if d is not None:
            for r in sorted(exprlang.refs(d)):
                visit(r, trail + [n])
        state[n] = 2

    for n in rule.maps:
        visit(n, [])


def _check_attr(rule, ref, role="attr", where=""):
    if ref is None:
        return
    if isinstance(ref, AttrRef):
        seen = set()
        for a, v in ref.entries:
            if a not in rule.axes:
                raise UndeclaredIdentifier(f"{where}: undeclared axis {a!r}")
            if a in seen:
                raise DuplicateDeclaration(f"{where}: axis {a!r} listed twice")
            seen.add(a)
            if isinstance(v, str):
                if rule.map_axis(v) != a:
                    raise DomainMismatch(f"{where}: map {v!r} lives on {rule.map_axis(v)!r}, not {a!r}")
                if (rule.maps[v].role == "index") != (role == "index"):
                    raise RuleError(f"{where}: map {v!r} has role {rule.maps[v].role!r}, expected {role!r}")
            elif role == "index":
                raise RuleError(f"{where}: reduction indices must be named maps")
    elif isinstance(ref, AxisRef):
        for a in ref.axes:
            if a not in rule.axes:
                raise UndeclaredIdentifier(f"{where}: undeclared axis {a!r}")
    elif isinstance(ref, RelabelRef):
        for a, b in ref.pairs:
            for n in (a, b):
                if n not in rule.axes:
                    raise UndeclaredIdentifier(f"{where}: undeclared axis {n!r}")


def _check_node(rule, e):
    where = e.opname
    if isinstance(e, Var):
        if e.name not in rule.tensors:
            raise UndeclaredIdentifier(f"tensor {e.name!r} is not declared")
        return
    if isinstance(e, Binary) and e.op not in BINARY_OPS:
        raise RuleError(f"unknown binary op {e.op!r}")
    if isinstance(e, Reduce) and e.op not in T.RED_OPS:
        raise RuleError(f"unknown reduction op {e.op!r}")
    if isinstance(e, Const) and e.elem not in ELEM_KINDS:
        raise RuleError(f"unknown element type {e.elem!r}")
    for f in dataclasses.fields(e):
        if f.name in e.CHILDREN:
            continue
        v = getattr(e, f.name)
        role = "index" if f.name == "indices" else "attr"
        _check_attr(rule, v, role, where)
