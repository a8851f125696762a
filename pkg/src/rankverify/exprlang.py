"""Pointwise expression language used in rule files.

Derived maps (``"def": "l + i * lp"``), preconditions (``"l1 >= 0 and l2 >= 0"``)
and si-hint relations are written as Python-syntax expressions and parsed
with :mod:`ast`.  Only map names, integer literals, ``+ - * // %``,
``min``/``max``/``cdiv``, comparisons and ``and``/``or`` are accepted.
``//`` and ``%`` follow SMT-LIB ``div``/``mod``.

Parsed expressions are nested tuples:

``("ref", name)``, ``("num", v)``, ``("bin", op, a, b)``, ``("neg", a)``,
``("call", fn, (args...))``, ``("cmp", op, a, b)``, ``("and", parts)``,
``("or", parts)``.
"""

from __future__ import annotations

import ast

from . import terms as T
from .errors import DomainMismatch, ParseError

_BINOPS = {ast.Add: "+", ast.Sub: "-", ast.Mult: "*", ast.FloorDiv: "//", ast.Mod: "%"}
_CMPOPS = {ast.Eq: "==", ast.NotEq: "!=", ast.Lt: "<", ast.LtE: "<=", ast.Gt: ">", ast.GtE: ">="}
_FUNCS = {"min": 2, "max": 2, "cdiv": 2}


def parse(text, pointer=None, boolean=False):
    """Parse ``text``; ``boolean`` selects formula (True) or integer expression."""
    if not isinstance(text, str):
        raise ParseError(f"expected expression string, got {type(text).__name__}", pointer=pointer)
    try:
        tree = ast.parse(text.strip(), mode="eval").body
    except SyntaxError as exc:
        raise ParseError(f"syntax error in {text!r} (col {exc.offset})", pointer=pointer) from None
    out = _conv_bool(tree, text, pointer) if boolean else _conv_num(tree, text, pointer)
    return out


def _bad(node, text, pointer, what):
    col = getattr(node, "col_offset", 0)
    raise ParseError(f"{what} in {text!r} at col {col}", pointer=pointer)


def _conv_bool(node, text, pointer):
    if isinstance(node, ast.BoolOp):
        tag = "and" if isinstance(node.op, ast.And) else "or"
        return (tag, tuple(_conv_bool(v, text, pointer) for v in node.values))
    if isinstance(node, ast.Compare):
        parts = []
        left = _conv_num(node.left, text, pointer)
        for op, right_node in zip(node.ops, node.comparators):
            if type(op) not in _CMPOPS:
                _bad(node, text, pointer, f"unsupported comparison {type(op).__name__}")
            right = _conv_num(right_node, text, pointer)
            parts.append(("cmp", _CMPOPS[type(op)], left, right))
            left = right
        return parts[0] if len(parts) == 1 else ("and", tuple(parts))
    if isinstance(node, ast.Constant) and isinstance(node.value, bool):
        return ("bool", node.value)
    _bad(node, text, pointer, "expected a comparison or and/or")


def _conv_num(node, text, pointer):
    if isinstance(node, ast.Name):
        return ("ref", node.id)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, int):
            _bad(node, text, pointer, "only integer literals are allowed")
        return ("num", node.value)
    if isinstance(node, ast.UnaryOp):
        inner = _conv_num(node.operand, text, pointer)
        if isinstance(node.op, ast.USub):
            return ("neg", inner)
        if isinstance(node.op, ast.UAdd):
            return inner
        _bad(node, text, pointer, "unsupported unary operator")
    if isinstance(node, ast.BinOp):
        if type(node.op) not in _BINOPS:
            _bad(node, text, pointer, f"unsupported operator {type(node.op).__name__}")
        return ("bin", _BINOPS[type(node.op)], _conv_num(node.left, text, pointer), _conv_num(node.right, text, pointer))
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
            _bad(node, text, pointer, "unknown function")
        if len(node.args) != _FUNCS[node.func.id]:
            _bad(node, text, pointer, f"{node.func.id} takes {_FUNCS[node.func.id]} arguments")
        return ("call", node.func.id, tuple(_conv_num(a, text, pointer) for a in node.args))
    _bad(node, text, pointer, f"unsupported syntax {type(node).__name__}")


def refs(expr):
    """Names referenced anywhere in ``expr``."""
    tag = expr[0]
    if tag == "ref":
        return {expr[1]}
    if tag in ("num", "bool"):
        return set()
    if tag == "neg":
        return refs(expr[1])
    if tag in ("bin", "cmp"):
        return refs(expr[2]) | refs(expr[3])
    if tag == "call":
        out = set()
        for a in expr[2]:
            out |= refs(a)
        return out
    out = set()
    for p in expr[1]:
        out |= refs(p)
    return out


def atoms(formula):
    """Comparison atoms of a boolean formula, left to right."""
    if formula[0] in ("and", "or"):
        out = []
        for p in formula[1]:
            out.extend(atoms(p))
        return out
    if formula[0] == "bool":
        return []
    return [formula]


def check_atom_domains(formula, axis_of, pointer=None):
    """Every atom must only mention maps living on one aggregated axis."""
    for atom in atoms(formula):
        axes = {axis_of(n) for n in refs(atom)}
        if len(axes) > 1:
            raise DomainMismatch(f"atom at {pointer or '?'} mixes maps over axes {sorted(axes)}")


def to_term(expr, resolve):
    """Integer expression -> term; ``resolve(name)`` supplies leaves."""
    tag = expr[0]
    if tag == "ref":
        return resolve(expr[1])
    if tag == "num":
        return T.lit(expr[1])
    if tag == "neg":
        return T.neg(to_term(expr[1], resolve))
    if tag == "bin":
        a = to_term(expr[2], resolve)
        b = to_term(expr[3], resolve)
        op = expr[1]
        if op == "+":
            return T.add(a, b)
        if op == "-":
            return T.sub(a, b)
        if op == "*":
            return T.mul(a, b)
        if op == "//":
            return T.div(a, b)
        return T.mod(a, b)
    if tag == "call":
        a, b = (to_term(x, resolve) for x in expr[2])
        if expr[1] == "min":
            return T.min_(a, b)
        if expr[1] == "max":
            return T.max_(a, b)
        return T.cdiv(a, b)
    raise ValueError(f"not an integer expression: {tag}")


_CMP = {"==": T.eq, "!=": T.ne, "<": T.lt, "<=": T.le, ">": T.gt, ">=": T.ge}


def cmp_term(op, a, b):
    return _CMP[op](a, b)


def formula_term(formula, instantiate_atom):
    """Boolean formula -> term; ``instantiate_atom(atom)`` expands one fold atom."""
    tag = formula[0]
    if tag == "and":
        return T.and_(*(formula_term(p, instantiate_atom) for p in formula[1]))
    if tag == "or":
        return T.or_(*(formula_term(p, instantiate_atom) for p in formula[1]))
    if tag == "bool":
        return T.lit(formula[1])
    return instantiate_atom(formula)


def unparse(expr):
    tag = expr[0]
    if tag == "ref":
        return expr[1]
    if tag == "num":
        return str(expr[1])
    if tag == "bool":
        return str(expr[1])
    if tag == "neg":
        return f"-({unparse(expr[1])})"
    if tag in ("bin", "cmp"):
        return f"({unparse(expr[2])} {expr[1]} {unparse(expr[3])})"
    if tag == "call":
        return f"{expr[1]}({', '.join(unparse(a) for a in expr[2])})"
    return f" {tag} ".join(f"({unparse(p)})" for p in expr[1])
