import math
import time

import pytest

from conftest import corpus_files, expected
from rankverify import analysis, rulefile

EXPECTED = expected()


@pytest.mark.parametrize("path", corpus_files(), ids=lambda p: p.stem)
def test_bounds_match_expected(path):
    rule = rulefile.load_path(path)
    start = time.monotonic()
    got = {c: r.bound for c, r in analysis.bound_reports(rule).items()}
    assert time.monotonic() - start < 1.0
    assert got == EXPECTED[rule.name]["bounds"]


@pytest.mark.parametrize("path", corpus_files(), ids=lambda p: p.stem)
def test_task_count_is_product_of_bounds(path):
    rule = rulefile.load_path(path)
    bounds = {c: r.bound for c, r in analysis.bound_reports(rule).items()}
    tasks = analysis.task_set(rule, bounds)
    assert len(tasks) == math.prod(bounds.values())
    assert len({tuple(sorted(t.items())) for t in tasks}) == len(tasks)
    for t in tasks:
        assert all(1 <= t[c] <= bounds[c] for c in bounds)


def test_singleton_rclass_is_fixed():
    rule = rulefile.load_path([p for p in corpus_files() if p.stem == "reduce-over-concat"][0])
    reps = analysis.bound_reports(rule)
    assert reps["c"].fixed and reps["c"].bound == 1


def test_bound_report_round_trip():
    rule = rulefile.load_path([p for p in corpus_files() if p.stem == "padlow-combine"][0])
    for r in analysis.bound_reports(rule).values():
        assert analysis.BoundReport.from_json(r.to_json()) == r
