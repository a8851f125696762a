"""JSON rule files: schema, loading, and conversion to :class:`ir.RewriteRule`.

A rule file looks like::

    {
      "name": "padlow-combine",
      "rclasses": ["c"],
      "axes": {"x": "c"},
      "maps": [{"name": "s", "axis": "x"}, {"name": "l1", "axis": "x"}, ...],
      "tensors": [{"name": "Y", "shape": {"x": "s"}}],
      "lhs": {"op": "pad_low", "arg": {"op": "pad_low", "arg": "Y", "value": 0, "low": {"x": "l1"}},
              "value": 0, "low": {"x": "l2"}},
      "rhs": {"op": "pad_low", "arg": "Y", "value": 0, "low": {"x": "l12"}},
      "preconditions": ["l1 >= 0", "l2 >= 0"]
    }

A bare string in expression position is a tensor variable.  Attribute maps
are objects from aggregated axis to a declared map name or an integer.
"""

from __future__ import annotations

import json
from pathlib import Path

import jsonschema

from . import exprlang
from . import ir
from .errors import ParseError

_ATTR = {"type": "object", "additionalProperties": {"oneOf": [{"type": "string"}, {"type": "integer"}]}}
_INDEX = {"type": "object", "additionalProperties": {"type": "string"}}
_AXES = {"type": "array", "items": {"type": "string"}}
_SCALAR = {"anyOf": [{"type": "number"}, {"type": "boolean"}]}
_EXPR = {"$ref": "#/$defs/expr"}

OPERATORS = {
    "var": ({"name": {"type": "string"}}, ["name"]),
    "const": ({"value": _SCALAR, "shape": _ATTR, "elem": {"enum": list(ir.ELEM_KINDS)}}, ["value", "shape"]),
    "iota": ({"shape": _ATTR, "axis": {"type": "string"}}, ["shape", "axis"]),
    "expand": ({"arg": _EXPR, "shape": _ATTR}, ["arg", "shape"]),
    "binary": ({"fn": {"enum": list(ir.BINARY_OPS)}, "lhs": _EXPR, "rhs": _EXPR}, ["fn", "lhs", "rhs"]),
    "pad_low": ({"arg": _EXPR, "value": _SCALAR, "low": _ATTR}, ["arg", "value", "low"]),
    "pad": ({"arg": _EXPR, "value": _SCALAR, "low": _ATTR, "high": _ATTR, "interior": _ATTR},
            ["arg", "value", "low", "high", "interior"]),
    "slice": ({"arg": _EXPR, "start": _ATTR, "end": _ATTR, "stride": _ATTR}, ["arg", "start", "end", "stride"]),
    "dy_slice": ({"arg": _EXPR, "start": _ATTR, "size": _ATTR}, ["arg", "start", "size"]),
    "dyup_slice": ({"arg": _EXPR, "update": _EXPR, "start": _ATTR}, ["arg", "update", "start"]),
    "reduce": ({"fn": {"enum": ["add", "max", "min"]}, "arg": _EXPR, "indices": _INDEX}, ["fn", "arg", "indices"]),
    "relabel": ({"arg": _EXPR, "mapping": {"type": "object", "additionalProperties": {"type": "string"}}},
                ["arg", "mapping"]),
    "concat": ({"lhs": _EXPR, "rhs": _EXPR, "axis": {"type": "string"}}, ["lhs", "rhs", "axis"]),
    "dot": ({"lhs": _EXPR, "rhs": _EXPR, "contract": _AXES, "batch": _AXES, "indices": _INDEX},
            ["lhs", "rhs", "contract", "batch"]),
    "conv_base": ({"input": _EXPR, "weight": _EXPR, "feature": _AXES, "stride": _ATTR, "indices": _INDEX},
                  ["input", "weight", "feature", "stride"]),
    "conv": ({"input": _EXPR, "weight": _EXPR, "feature": _AXES, "low": _ATTR, "high": _ATTR,
              "lhs_dilation": _ATTR, "rhs_dilation": _ATTR, "stride": _ATTR, "indices": _INDEX},
             ["input", "weight", "feature", "low", "high", "lhs_dilation", "rhs_dilation", "stride"]),
    "reverse": ({"arg": _EXPR, "axes": _AXES}, ["arg", "axes"]),
    "select": ({"pred": _EXPR, "on_true": _EXPR, "on_false": _EXPR}, ["pred", "on_true", "on_false"]),
    "clamp": ({"lo": _EXPR, "arg": _EXPR, "hi": _EXPR}, ["lo", "arg", "hi"]),
}


def _expr_schema():
    branches = []
    for op, (props, required) in OPERATORS.items():
        p = {"op": {"const": op}, "comment": {"type": "string"}}
        p.update(props)
        branches.append({
            "if": {"properties": {"op": {"const": op}}, "required": ["op"]},
            "then": {"properties": p, "required": ["op"] + required, "additionalProperties": False},
        })
    return {
        "oneOf": [
            {"type": "string"},
            {"type": "object", "required": ["op"],
             "properties": {"op": {"enum": list(OPERATORS)}}, "allOf": branches},
        ]
    }


RULE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "rankverify rewrite rule",
    "type": "object",
    "required": ["name", "rclasses", "axes", "maps", "tensors", "lhs", "rhs"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "description": {"type": "string"},
        "rclasses": {"type": "array", "items": {"oneOf": [
            {"type": "string"},
            {"type": "object", "required": ["name"], "additionalProperties": False,
             "properties": {"name": {"type": "string"}, "singleton": {"type": "boolean"}}}]}},
        "axes": {"type": "object", "additionalProperties": {"type": "string"}},
        "maps": {"type": "array", "items": {
            "type": "object", "required": ["name", "axis"], "additionalProperties": False,
            "properties": {"name": {"type": "string", "pattern": "^[A-Za-z_][A-Za-z0-9_]*$"},
                           "axis": {"type": "string"},
                           "role": {"enum": ["attr", "index"]},
                           "def": {"type": "string"}}}},
        "tensors": {"type": "array", "items": {
            "type": "object", "required": ["name", "shape"], "additionalProperties": False,
            "properties": {"name": {"type": "string", "pattern": "^[A-Za-z_][A-Za-z0-9_]*$"},
                           "shape": {"type": "object", "additionalProperties": {"type": "string"}},
                           "elem": {"enum": list(ir.ELEM_KINDS)}}}},
        "lhs": _EXPR,
        "rhs": _EXPR,
        "preconditions": {"type": "array", "items": {"type": "string"}},
        "si_hints": {"type": "array", "items": {
            "type": "object", "required": ["lhs", "rhs", "relation"], "additionalProperties": False,
            "properties": {"lhs": _AXES, "rhs": _AXES, "relation": {"type": "string"}}}},
    },
    "$defs": {"expr": _expr_schema()},
}

_VALIDATOR = jsonschema.Draft202012Validator(RULE_SCHEMA)


def _pointer(path):
    return "/" + "/".join(str(p) for p in path)


def validate_document(doc, path=None):
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if not errors:
        return
    err = _deepest(errors)
    raise ParseError(err.message, path=path, pointer=_pointer(err.absolute_path))


def _deepest(errors):
    best = errors[0]
    stack = list(errors)
    while stack:
        e = stack.pop()
        if len(e.absolute_path) > len(best.absolute_path):
            best = e
        stack.extend(e.context or [])
    return best


def load_path(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read rule file: {exc.strerror}", path=path) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg} (line {exc.lineno}, col {exc.colno})", path=path) from None
    return from_document(doc, path)


def from_document(doc, path=None):
    validate_document(doc, path)
    try:
        return _convert(doc, path)
    except ParseError as exc:
        if exc.path is None and path is not None:
            raise ParseError(str(exc), path=path) from None
        raise


def _convert(doc, path):
    rclasses = []
    for r in doc["rclasses"]:
        if isinstance(r, str):
            rclasses.append(ir.RClass(r))
        else:
            rclasses.append(ir.RClass(r["name"], bool(r.get("singleton", False))))
    axes = [ir.AggAxis(n, rc) for n, rc in doc["axes"].items()]
    maps = []
    for i, m in enumerate(doc["maps"]):
        definition = None
        if "def" in m:
            definition = exprlang.parse(m["def"], pointer=f"/maps/{i}/def")
        maps.append(ir.MapDecl(m["name"], m["axis"], m.get("role", "attr"), definition, m.get("def")))
    tensors = [ir.TensorDecl(t["name"], tuple(t["shape"].items()), t.get("elem", "int")) for t in doc["tensors"]]
    lhs = _expr(doc["lhs"], "/lhs")
    rhs = _expr(doc["rhs"], "/rhs")
    pres = [ir.Precondition(exprlang.parse(p, pointer=f"/preconditions/{i}", boolean=True), p)
            for i, p in enumerate(doc.get("preconditions", []))]
    hints = [ir.SiHint(tuple(h["lhs"]), tuple(h["rhs"]),
                       exprlang.parse(h["relation"], pointer=f"/si_hints/{i}/relation", boolean=True), h["relation"])
             for i, h in enumerate(doc.get("si_hints", []))]
    return ir.build_rule(doc["name"], rclasses, axes, maps, tensors, lhs, rhs, pres, hints,
                         doc.get("description", ""))


def _attr(obj):
    return ir.AttrRef(tuple(sorted(obj.items())))


def _opt_index(obj):
    return None if obj is None else _attr(obj)


def _expr(node, ptr):
    if isinstance(node, str):
        return ir.Var(node)
    op = node["op"]
    sub = lambda key: _expr(node[key], f"{ptr}/{key}")
    if op == "var":
        return ir.Var(node["name"])
    if op == "const":
        return ir.Const(node["value"], _attr(node["shape"]), node.get("elem", "int"))
    if op == "iota":
        return ir.Iota(_attr(node["shape"]), ir.AxisRef((node["axis"],)))
    if op == "expand":
        return ir.Expand(sub("arg"), _attr(node["shape"]))
    if op == "binary":
        return ir.Binary(node["fn"], sub("lhs"), sub("rhs"))
    if op == "pad_low":
        return ir.PadLow(sub("arg"), node["value"], _attr(node["low"]))
    if op == "pad":
        return ir.Pad(sub("arg"), node["value"], _attr(node["low"]), _attr(node["high"]), _attr(node["interior"]))
    if op == "slice":
        return ir.Slice(sub("arg"), _attr(node["start"]), _attr(node["end"]), _attr(node["stride"]))
    if op == "dy_slice":
        return ir.DySlice(sub("arg"), _attr(node["start"]), _attr(node["size"]))
    if op == "dyup_slice":
        return ir.DyUpSlice(sub("arg"), sub("update"), _attr(node["start"]))
    if op == "reduce":
        return ir.Reduce(node["fn"], sub("arg"), _attr(node["indices"]))
    if op == "relabel":
        return ir.Relabel(sub("arg"), ir.RelabelRef(tuple(sorted(node["mapping"].items()))))
    if op == "concat":
        return ir.Concat(sub("lhs"), sub("rhs"), ir.AxisRef((node["axis"],)))
    if op == "dot":
        return ir.Dot(sub("lhs"), sub("rhs"), ir.AxisRef(tuple(node["contract"])),
                      ir.AxisRef(tuple(node["batch"])), _opt_index(node.get("indices")))
    if op == "conv_base":
        return ir.ConvBase(sub("input"), sub("weight"), ir.AxisRef(tuple(node["feature"])),
                           _attr(node["stride"]), _opt_index(node.get("indices")))
    if op == "conv":
        return ir.Conv(sub("input"), sub("weight"), ir.AxisRef(tuple(node["feature"])), _attr(node["low"]),
                       _attr(node["high"]), _attr(node["lhs_dilation"]), _attr(node["rhs_dilation"]),
                       _attr(node["stride"]), _opt_index(node.get("indices")))
    if op == "reverse":
        return ir.Reverse(sub("arg"), ir.AxisRef(tuple(node["axes"])))
    if op == "select":
        return ir.Select(sub("pred"), sub("on_true"), sub("on_false"))
    if op == "clamp":
        return ir.Clamp(sub("lo"), sub("arg"), sub("hi"))
    raise ParseError(f"unknown operator {op!r}", pointer=ptr)


def discover(paths):
    """Expand directories into their ``*.json`` rule files (``expected.json`` excluded)."""
    out = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            out.extend(sorted(q for q in p.glob("*.json") if q.name != "expected.json"))
        elif p.exists():
            out.append(p)
        else:
            raise ParseError("no such file or directory", path=p)
    return out
