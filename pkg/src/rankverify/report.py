"""Machine-readable run reports, their JSON schema, and the text rendering."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import jsonschema

from . import __version__
from .analysis import BoundReport
from .verifier import Verdict

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_INCONCLUSIVE = 2
EXIT_ERROR = 3


@dataclass
class RuleError:
    """A rule that could not be processed at all (bad file, missing solver, ...)."""

    path: str
    error: str
    kind: str

    def to_json(self):
        return {"path": self.path, "error": self.error, "kind": self.kind}

    @classmethod
    def from_json(cls, d):
        return cls(d["path"], d["error"], d["kind"])


@dataclass
class Report:
    command: str
    config: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)
    bounds: list = field(default_factory=list)  # [{"rule", "path", "bounds": {c: BoundReport}}]
    fuzz: list = field(default_factory=list)  # DiffReport json, one per rule and rank tuple
    errors: list = field(default_factory=list)
    seconds: float = 0.0
    version: str = __version__
    exit_code: Optional[int] = None

    def summary(self):
        counts = {}
        for v in self.verdicts:
            counts[v.overall] = counts.get(v.overall, 0) + 1
        return dict(sorted(counts.items()))

    def compute_exit_code(self):
        if self.errors:
            return EXIT_ERROR
        if self.command == "fuzz":
            if any(f.get("mismatches") for f in self.fuzz):
                return EXIT_INVALID
            return EXIT_INCONCLUSIVE if any("error" in f for f in self.fuzz) else EXIT_OK
        statuses = {v.overall for v in self.verdicts}
        if "Invalid" in statuses:
            return EXIT_INVALID
        if statuses & {"Unknown", "Unsupported"}:
            return EXIT_INCONCLUSIVE
        return EXIT_OK

    def to_json(self):
        return {
            "tool": "rankverify",
            "version": self.version,
            "command": self.command,
            "config": dict(self.config),
            "summary": self.summary(),
            "exit_code": self.exit_code if self.exit_code is not None else self.compute_exit_code(),
            "verdicts": [v.to_json() for v in self.verdicts],
            "bounds": [{"rule": b["rule"], "path": b["path"],
                        "bounds": {c: r.to_json() for c, r in b["bounds"].items()}} for b in self.bounds],
            "fuzz": list(self.fuzz),
            "errors": [e.to_json() for e in self.errors],
            "seconds": self.seconds,
        }

    @classmethod
    def from_json(cls, d):
        validate(d)
        return cls(
            command=d["command"],
            config=dict(d["config"]),
            verdicts=[Verdict.from_json(v) for v in d["verdicts"]],
            bounds=[{"rule": b["rule"], "path": b["path"],
                     "bounds": {c: BoundReport.from_json(r) for c, r in b["bounds"].items()}}
                    for b in d["bounds"]],
            fuzz=list(d["fuzz"]),
            errors=[RuleError.from_json(e) for e in d["errors"]],
            seconds=d["seconds"],
            version=d["version"],
            exit_code=d["exit_code"],
        )

    def dumps(self):
        return json.dumps(self.to_json(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def loads(cls, text):
        return cls.from_json(json.loads(text))


# ------------------------------------------------------------------ schema

_INT_MAP = {"type": "object", "additionalProperties": {"type": "integer"}}
_VALUE = {"type": ["integer", "string", "boolean", "null"]}

_BOUND = {
    "type": "object",
    "required": ["rclass", "bound", "access_counts", "condition_count", "tensors", "conditions", "fixed"],
    "additionalProperties": False,
    "properties": {
        "rclass": {"type": "string"},
        "bound": {"type": "integer", "minimum": 1},
        "access_counts": _INT_MAP,
        "condition_count": {"type": "integer", "minimum": 0},
        "tensors": {"type": "array", "items": {"type": "string"}},
        "conditions": {"type": "array", "items": {"type": "string"}},
        "fixed": {"type": "boolean"},
    },
}

_TENSOR = {
    "type": "object",
    "required": ["axes", "sizes", "data"],
    "properties": {
        "axes": {"type": "array", "items": {"type": "string"}},
        "sizes": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "data": {"type": "array"},
    },
}

_CEX = {
    "type": ["object", "null"],
    "required": ["ranks", "obligation", "model", "tensors", "access", "lhs_value", "rhs_value",
                 "reason", "confirmed", "note"],
    "additionalProperties": False,
    "properties": {
        "ranks": _INT_MAP,
        "obligation": {"type": "string"},
        "model": {"type": "object", "additionalProperties": _VALUE},
        "tensors": {"type": "object", "additionalProperties": _TENSOR},
        "access": {"type": ["object", "null"], "additionalProperties": {"type": "integer"}},
        "lhs_value": _VALUE,
        "rhs_value": _VALUE,
        "reason": {"enum": ["value", "rhs-invalid", "shape", "structural"]},
        "confirmed": {"type": "boolean"},
        "note": {"type": "string"},
    },
}

_OBLIGATION = {
    "type": "object",
    "required": ["name", "status", "seconds", "note"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "status": {"enum": ["unsat", "sat", "unknown", "timeout", "solver-error", "skipped"]},
        "seconds": {"type": "number", "minimum": 0},
        "note": {"type": "string"},
    },
}

_TASK = {
    "type": "object",
    "required": ["ranks", "status", "reason", "obligations", "counterexample", "seconds"],
    "additionalProperties": False,
    "properties": {
        "ranks": _INT_MAP,
        "status": {"enum": ["Verified", "Invalid", "Unknown", "Unsupported", "Skipped"]},
        "reason": {"type": "string"},
        "obligations": {"type": "array", "items": _OBLIGATION},
        "counterexample": _CEX,
        "seconds": {"type": "number", "minimum": 0},
    },
}

_VERDICT = {
    "type": "object",
    "required": ["rule", "path", "verdict", "reason", "conclusive", "bounds", "ranks_used", "tasks",
                 "counterexample", "oracle", "seconds"],
    "additionalProperties": False,
    "properties": {
        "rule": {"type": "string"},
        "path": {"type": "string"},
        "verdict": {"enum": ["Verified", "Invalid", "Unknown", "Unsupported"]},
        "reason": {"type": "string"},
        "conclusive": {"type": "boolean"},
        "bounds": {"type": "object", "additionalProperties": _BOUND},
        "ranks_used": _INT_MAP,
        "tasks": {"type": "array", "items": _TASK},
        "counterexample": _CEX,
        "oracle": {"type": "array", "items": {"type": "object"}},
        "seconds": {"type": "number", "minimum": 0},
    },
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "rankverify report",
    "type": "object",
    "required": ["tool", "version", "command", "config", "summary", "exit_code", "verdicts", "bounds",
                 "fuzz", "errors", "seconds"],
    "additionalProperties": False,
    "properties": {
        "tool": {"const": "rankverify"},
        "version": {"type": "string"},
        "command": {"enum": ["verify", "bounds", "fuzz"]},
        "config": {"type": "object"},
        "summary": _INT_MAP,
        "exit_code": {"enum": [EXIT_OK, EXIT_INVALID, EXIT_INCONCLUSIVE, EXIT_ERROR]},
        "verdicts": {"type": "array", "items": _VERDICT},
        "bounds": {"type": "array", "items": {
            "type": "object", "required": ["rule", "path", "bounds"], "additionalProperties": False,
            "properties": {"rule": {"type": "string"}, "path": {"type": "string"},
                           "bounds": {"type": "object", "additionalProperties": _BOUND}}}},
        "fuzz": {"type": "array", "items": {"type": "object"}},
        "errors": {"type": "array", "items": {
            "type": "object", "required": ["path", "error", "kind"], "additionalProperties": False,
            "properties": {"path": {"type": "string"}, "error": {"type": "string"}, "kind": {"type": "string"}}}},
        "seconds": {"type": "number", "minimum": 0},
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(REPORT_SCHEMA)


def validate(doc):
    """Raise ``jsonschema.ValidationError`` when ``doc`` is not a well-formed report."""
    _VALIDATOR.validate(doc)


# ------------------------------------------------------------------ text

def _fmt_ranks(ranks):
    return ", ".join(f"{c}={k}" for c, k in ranks.items()) or "-"


def _fmt_bound(b):
    accesses = ", ".join(f"{t}:{n}" for t, n in sorted(b.access_counts.items())) or "none"
    tail = " (singleton)" if b.fixed else f" (accesses {accesses}; conditions {b.condition_count})"
    return f"{b.rclass}: bound {b.bound}{tail}"


def render_text(report):
    lines = []
    for v in report.verdicts:
        head = f"{v.rule}: {v.overall}"
        if v.reason:
            head += f" ({v.reason})"
        lines.append(f"{head}  [{len(v.tasks)} tasks, {v.seconds:.2f}s]")
        for b in v.bounds.values():
            lines.append(f"  {_fmt_bound(b)}")
        for t in v.tasks:
            if t.status in ("Verified", "Skipped"):
                continue
            lines.append(f"  task {_fmt_ranks(t.ranks)}: {t.status} {t.reason}".rstrip())
        cex = v.counterexample
        if cex is not None:
            tag = "confirmed" if cex.confirmed else "unconfirmed"
            lines.append(f"  counterexample ({cex.reason}, {tag}) at ranks {_fmt_ranks(cex.ranks)}")
            if cex.model:
                lines.append("    " + ", ".join(f"{k}={val}" for k, val in cex.model.items()))
            if cex.access:
                lines.append(f"    access {_fmt_ranks(cex.access)}: lhs={cex.lhs_value} rhs={cex.rhs_value}")
            if cex.note:
                lines.append(f"    {cex.note}")
    for b in report.bounds:
        lines.append(f"{b['rule']}:")
        for r in b["bounds"].values():
            lines.append(f"  {_fmt_bound(r)}")
    for f in report.fuzz:
        where = f"{f['rule']} at {_fmt_ranks(f['ranks'])}"
        if "error" in f:
            lines.append(f"{where}: {f['error']}")
        else:
            lines.append(f"{where}: {f['trials']} trials, {f['mismatches']} mismatches")
            if f.get("first"):
                lines.append(f"  first mismatch: {json.dumps(f['first'], sort_keys=True)}")
    for e in report.errors:
        lines.append(f"error: {e.error}" if e.error.startswith(e.path) else f"error: {e.path}: {e.error}")
    if report.verdicts:
        lines.append("summary: " + ", ".join(f"{k} {n}" for k, n in report.summary().items()))
    return "\n".join(lines) + "\n"
