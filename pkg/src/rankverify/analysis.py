"""Rank bound inference.

The rule is evaluated once at a small probe rank.  Distinct tensor reads and
distinct non-trivial guard folds are counted after every symbol has been
replaced by an abstract stand-in for its (map, aggregated axis) pair, so the
counts do not depend on the probe rank.  The bound for a rank class is then
``max(1, sum_t C(n_t, 2) + m)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

from . import instantiate as inst_mod
from . import symeval
from . import terms as T


@dataclass
class BoundReport:
    rclass: str
    bound: int
    access_counts: dict = field(default_factory=dict)
    condition_count: int = 0
    tensors: list = field(default_factory=list)
    conditions: list = field(default_factory=list)
    fixed: bool = False  # singleton class, always rank 1

    def to_json(self):
        return {
            "rclass": self.rclass,
            "bound": self.bound,
            "access_counts": dict(self.access_counts),
            "condition_count": self.condition_count,
            "tensors": list(self.tensors),
            "conditions": list(self.conditions),
            "fixed": self.fixed,
        }

    @classmethod
    def from_json(cls, d):
        return cls(d["rclass"], d["bound"], dict(d["access_counts"]), d["condition_count"],
                   list(d["tensors"]), list(d["conditions"]), d["fixed"])


def tensors_with_rclass(rule, c):
    return sorted(name for name, decl in rule.tensors.items()
                  if any(rule.rclass_of(ax) == c for ax in decl.axes))


def probe_ranks(rule, rank=1):
    return {rc: (1 if rule.rclasses[rc].singleton else rank) for rc in rule.rclasses}


# ----------------------------------------------------------------- probing

def _equality_substitution(pre, inst, order):
    """Solve unit-coefficient equalities of the precondition for attribute symbols.

    Later-declared maps are eliminated first, so ``start' == start`` rewrites
    ``start'`` in terms of ``start``.
    """
    rank = {name: i for i, name in enumerate(order)}
    eqs = [a for a in T.conjuncts(pre) if a.op == "eq" and a.args[0].kind == T.INT]
    subst = {}
    while eqs:
        atom = eqs.pop(0)
        atom = T.substitute(atom, subst) if subst else atom
        if atom.op != "eq":
            continue
        lhs, rhs = atom.args
        poly = T._poly(lhs)
        best = None
        for mono, coef in poly.items():
            if len(mono) != 1 or coef not in (1, -1) or mono[0].op != "sym":
                continue
            s = mono[0]
            info = inst.info.get(s.val)
            if info is None or info.role not in ("attr", "size"):
                continue
            if any(s in m2 for m2 in poly if m2 != mono):
                continue
            key = (rank.get(info.base, -1), s.val)
            if best is None or key > best[0]:
                best = (key, s, coef)
        if best is None:
            continue
        _, s, coef = best
        rest = T._padd({}, poly)
        rest.pop((s,))
        value = T.sub(rhs, T._from_poly(rest, T.INT))
        if coef == -1:
            value = T.neg(value)
        subst = {k: T.substitute(v, {s: value}) for k, v in subst.items()}
        subst[s] = value
    return subst


class _Abstractor:
    def __init__(self, inst):
        self.inst = inst
        self._memo = {}

    def sym_map(self, t):
        mapping = {}
        for s in T.free_symbols(t) | self._bound(t):
            info = self.inst.info.get(s.val)
            if info is not None and info.aggaxis is not None:
                mapping[s] = T.sym(f"{info.base}@{info.aggaxis}", s.kind)
        return mapping

    @staticmethod
    def _bound(t):
        out = set()
        for n in T.walk(t):
            if n.op == "red":
                out.update(T.red_parts(n)[1])
        return out

    def __call__(self, t):
        hit = self._memo.get(t)
        if hit is None:
            hit = T.substitute(t, self.sym_map(t))
            self._memo[t] = hit
        return hit

    def aggaxes(self, t):
        out = set()
        for s in T.free_symbols(t) | self._bound(t):
            info = self.inst.info.get(s.val)
            if info is not None and info.aggaxis is not None:
                out.add(info.aggaxis)
        return frozenset(out)


def _ranges(value_terms, access, shape):
    """Symbol -> extent facts that hold for every in-range access."""
    out = {access[a]: shape[a] for a in shape.domain}
    for t in value_terms:
        for n in T.walk(t):
            if n.op == "red":
                _, syms, sizes, _ = T.red_parts(n)
                out.update(zip(syms, sizes))
    return out


def _range_trivial(atom, ranges):
    if atom.op != "ge":
        return False
    p, c = atom.args
    if c.val == 0 and p in ranges:
        return True
    if c.val == 1:
        for s, size in ranges.items():
            if T.sub(size, s) is p:
                return True
    return False


def _guards(value_terms):
    seen = set()
    out = []
    for t in value_terms:
        for n in T.walk(t):
            if n.op == "ite" and n.args[0] not in seen:
                seen.add(n.args[0])
                out.append(n.args[0])
    return out


def _reads(value_terms):
    seen = set()
    out = []
    for t in value_terms:
        for n in T.walk(t):
            if n.op == "read" and n not in seen:
                seen.add(n)
                out.append(n)
    return out


@dataclass
class Probe:
    accesses: dict  # tensor -> set of abstract read signatures
    conditions: dict  # (aggaxes, atoms) signature -> printable form
    rclass_of_aggaxis: dict


def probe(rule, rank=1, alias=None):
    """Evaluate ``rule`` at ``rank`` and collect abstract accesses and guard folds."""
    alias = alias or {}
    ranks = probe_ranks(rule, rank)
    ir_ = inst_mod.instantiate(rule, ranks, "probe")
    inst = ir_.inst
    lt, _ = symeval.sym_eval(ir_.lhs, ir_.env, inst.fresh)
    rt, _ = symeval.sym_eval(ir_.rhs, ir_.env, inst.fresh)
    access = {a: inst.fresh("acc", a, "access") for a in lt.axes}
    values = [lt.at(access)]
    if set(rt.axes) == set(lt.axes):
        values.append(rt.at(access))
    subst = _equality_substitution(ir_.pre, inst, list(rule.maps))
    if subst:
        values = [T.substitute(v, subst) for v in values]
    absx = _Abstractor(inst)

    accesses = {}
    for r in _reads(values):
        tensor = alias.get(r.val, r.val)
        sig = ir_.env[r.val]
        per_axis = {}
        for ax, idx in zip(sig.axes, r.args):
            per_axis.setdefault(inst.parent[ax], set()).add(absx(idx))
        key = tuple(sorted((agg, frozenset(v)) for agg, v in per_axis.items()))
        accesses.setdefault(tensor, set()).add((r.val, key))

    ranges = _ranges(values, access, lt.shape)
    conditions = {}
    for g in _guards(values):
        groups = {}
        for atom in T.conjuncts(g) if g.op == "and" else [g]:
            if T.contains(atom, lambda n: n.op in ("read", "red")):
                continue
            if _range_trivial(atom, ranges):
                continue
            aggs = absx.aggaxes(atom)
            if not aggs:
                continue
            groups.setdefault(aggs, set()).add(absx(atom))
        for aggs, atoms in groups.items():
            key = (aggs, frozenset(atoms))
            if key not in conditions:
                conditions[key] = " & ".join(sorted(T.show(a) for a in atoms))
    return Probe(accesses, conditions, {a: ax.rclass for a, ax in rule.axes.items()})


# ------------------------------------------------------------------ bounds

def num_tensor_access(rule, tensor, rank=1):
    p = probe(rule, rank)
    return len(p.accesses.get(tensor, ()))


def num_conds(rule, c, rank=1):
    p = probe(rule, rank)
    return sum(1 for aggs, _ in p.conditions if any(p.rclass_of_aggaxis[a] == c for a in aggs))


def bound_reports(rule, rank=1, alias=None):
    """One :class:`BoundReport` per rank class, in declaration order."""
    alias = dict(alias or {})
    p = probe(rule, rank, alias)
    out = {}
    for c, rc in rule.rclasses.items():
        tensors = tensors_with_rclass(rule, c)
        if rc.singleton:
            out[c] = BoundReport(c, 1, {}, 0, tensors, [], fixed=True)
            continue
        counts = {}
        total = 0
        for group in sorted({alias.get(t, t) for t in tensors}):
            n = len(p.accesses.get(group, ()))
            counts[group] = n
            if n > 1:
                total += math.comb(n, 2)
        conds = sorted(text for (aggs, _), text in p.conditions.items()
                       if any(p.rclass_of_aggaxis[a] == c for a in aggs))
        out[c] = BoundReport(c, max(1, total + len(conds)), counts, len(conds), tensors, conds)
    return out


def infer_bound(rule, c, rank=1):
    return bound_reports(rule, rank)[c].bound


def task_set(rule, bounds):
    """Every rank tuple with ``1 <= rank[c] <= bounds[c]``, lexicographic in declaration order."""
    names = list(rule.rclasses)
    ranges = [range(1, int(bounds[c]) + 1) for c in names]
    return [dict(zip(names, combo)) for combo in itertools.product(*ranges)]
