import json
from pathlib import Path

import pytest

from conftest import ROOT, corpus_files
from rankverify import report, rulefile
from rankverify.errors import ParseError, RuleError, UndeclaredIdentifier


def _doc(**over):
    doc = {
        "name": "t",
        "rclasses": ["c"],
        "axes": {"x": "c"},
        "maps": [{"name": "s", "axis": "x"}],
        "tensors": [{"name": "Y", "shape": {"x": "s"}}],
        "lhs": "Y",
        "rhs": {"op": "reverse", "arg": {"op": "reverse", "arg": "Y", "axes": ["x"]}, "axes": ["x"]},
    }
    doc.update(over)
    return doc


@pytest.mark.parametrize("path", corpus_files(), ids=lambda p: p.stem)
def test_corpus_files_load(path):
    rule = rulefile.load_path(path)
    assert rule.name == path.stem


def test_schema_error_carries_pointer():
    doc = _doc(rhs={"op": "slice", "arg": "Y", "start": {"x": 0}, "end": {"x": "s"}, "stride": "bad"})
    with pytest.raises(ParseError) as info:
        rulefile.from_document(doc, "r.json")
    assert info.value.pointer.startswith("/rhs")
    assert "r.json" in str(info.value)


def test_unknown_operator_rejected():
    with pytest.raises(ParseError):
        rulefile.from_document(_doc(rhs={"op": "frobnicate", "arg": "Y"}))


def test_missing_field_rejected():
    doc = _doc()
    del doc["lhs"]
    with pytest.raises(ParseError):
        rulefile.from_document(doc)


def test_undeclared_tensor_rejected():
    with pytest.raises(RuleError):
        rulefile.from_document(_doc(lhs="Z"))


def test_undeclared_axis_rejected():
    with pytest.raises(UndeclaredIdentifier):
        rulefile.from_document(_doc(tensors=[{"name": "Y", "shape": {"q": "s"}}]))


def test_bad_json_reports_location(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{\n  \"name\": ")
    with pytest.raises(ParseError) as info:
        rulefile.load_path(p)
    assert "line" in str(info.value)


def test_discover_skips_expected(tmp_path):
    files = rulefile.discover([ROOT / "corpus"])
    assert files and all(f.name != "expected.json" for f in files)
    with pytest.raises(ParseError):
        rulefile.discover([tmp_path / "missing"])


def test_every_operator_has_schema():
    ops = set(rulefile.OPERATORS)
    assert {"pad_low", "slice", "dy_slice", "dyup_slice", "reduce", "concat", "dot", "conv",
            "conv_base", "reverse", "select", "clamp", "iota", "const", "expand", "binary",
            "relabel", "pad"} <= ops


def test_published_schemas_match_code():
    rule_doc = json.loads((ROOT / "docs" / "rule.schema.json").read_text())
    report_doc = json.loads((ROOT / "docs" / "report.schema.json").read_text())
    assert rule_doc == json.loads(json.dumps(rulefile.RULE_SCHEMA))
    assert report_doc == json.loads(json.dumps(report.REPORT_SCHEMA))
