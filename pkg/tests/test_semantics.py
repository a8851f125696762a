"""Symbolic evaluation agrees with the concrete interpreter, operator by operator.

For every case the symbolic validity formula must match whether the
interpreter accepts the inputs, and on accepted inputs the symbolic shape
and every symbolic element must evaluate to the interpreter's result.
"""

import random

import pytest

from rankverify import concrete, instantiate, rulefile, symeval
from rankverify import terms as T
from rankverify.errors import ValidityViolation

CASES = 120
SIZE_CAP = 5
MAX_RANK = 3


def _rule(name, axes, maps, tensors, lhs, rclasses=None, pre=()):
    doc = {
        "name": name,
        "rclasses": rclasses or sorted(set(axes.values())),
        "axes": axes,
        "maps": [dict(zip(("name", "axis", "role"), m)) for m in maps],
        "tensors": [dict(t) for t in tensors],
        "lhs": lhs,
        "rhs": lhs,
        "preconditions": list(pre),
    }
    return rulefile.from_document(doc)


def _one(axis="x", extra=(), elem=None, names=("Y",)):
    maps = [("s", axis)] + list(extra)
    tensors = []
    for n in names:
        t = {"name": n, "shape": {axis: "s"}}
        if elem:
            t["elem"] = elem
        tensors.append(t)
    return maps, tensors


def _draw_unguided(ir_, rng):
    model = {}
    for name, info in ir_.inst.info.items():
        if info.role == "size":
            model[name] = rng.randint(0, SIZE_CAP)
        elif info.role == "attr":
            model[name] = rng.randint(-2, SIZE_CAP)
    return model


def _tensors(ir_, model, rng):
    return {n: concrete.random_tensor(sig, model, rng, 4) for n, sig in ir_.env.items()}


def _fn(ct):
    def read(idx):
        idx = tuple(int(i) for i in idx)
        if any(not 0 <= i < n for i, n in zip(idx, ct.data.shape)):
            # only legal inside an untaken branch; evaluate() re-raises it if used
            raise T.EvalError(f"read {idx} outside {ct.data.shape}")
        return ct.data[idx]
    return read


def check_operator(rule, seed=0, cases=CASES, rank_cap=MAX_RANK):
    rng = random.Random(f"{rule.name}:{seed}")
    stats = {"valid": 0, "invalid": 0}
    done = 0
    while done < cases:
        ranks = {c: (1 if rule.rclasses[c].singleton else rng.randint(1, rank_cap)) for c in rule.rclasses}
        ir_ = instantiate.instantiate(rule, ranks, "sem")
        model = None
        if rng.random() < 0.5:
            model = concrete._Sampler(ir_, SIZE_CAP, rng).draw()
        if model is None:
            model = _draw_unguided(ir_, rng)
        env = _tensors(ir_, model, rng)
        fns = {n: _fn(t) for n, t in env.items()}
        st, sv = symeval.sym_eval(ir_.lhs, ir_.env, ir_.inst.fresh)
        try:
            sym_ok = T.evaluate(sv, model, fns)
        except T.EvalError:
            sym_ok = False
        try:
            out = concrete.eval_concrete(ir_.lhs, env, model)
            conc_ok = True
        except ValidityViolation:
            conc_ok = False
        assert sym_ok == conc_ok, (ranks, model)
        done += 1
        if not conc_ok:
            stats["invalid"] += 1
            continue
        stats["valid"] += 1
        sizes = {a: T.evaluate(st.shape[a], model) for a in st.axes}
        assert sizes == dict(out.sizes), (ranks, model)
        for point in out.points():
            access = {a: T.lit(int(v)) for a, v in point.items()}
            got = T.evaluate(st.at(access), model, fns)
            assert got == out.at(point), (ranks, model, point)
    return stats


def _expect(stats, may_be_invalid=True):
    assert stats["valid"] + stats["invalid"] >= 100
    assert stats["valid"] >= 20
    if may_be_invalid:
        assert stats["invalid"] >= 5


def test_var_and_relabel():
    maps = [("s1", "x1"), ("s2", "x2")]
    tensors = [{"name": "t", "shape": {"x1": "s1", "x2": "s2"}}]
    rule = _rule("relabel", {"x1": "c", "x2": "c"}, maps, tensors,
                 {"op": "relabel", "arg": "t", "mapping": {"x1": "x2", "x2": "x1"}})
    _expect(check_operator(rule), may_be_invalid=False)


def test_const_and_iota():
    maps, _ = _one()
    rule = _rule("iota", {"x": "c"}, maps, [{"name": "Y", "shape": {"x": "s"}}],
                 {"op": "binary", "fn": "add", "lhs": "Y",
                  "rhs": {"op": "binary", "fn": "mul", "lhs": {"op": "iota", "shape": {"x": "s"}, "axis": "x"},
                          "rhs": {"op": "const", "value": 3, "shape": {"x": "s"}}}},
                 rclasses=[{"name": "c", "singleton": True}])
    _expect(check_operator(rule), may_be_invalid=False)


def test_expand():
    rule = _rule("expand", {"x": "c", "y": "d"}, [("s", "x"), ("n", "y")], [{"name": "Y", "shape": {"x": "s"}}],
                 {"op": "expand", "arg": "Y", "shape": {"y": "n"}})
    _expect(check_operator(rule), may_be_invalid=False)


@pytest.mark.parametrize("fn", ["add", "sub", "mul", "max", "min", "eq", "ne", "lt", "le", "gt", "ge"])
def test_binary_numeric(fn):
    maps, tensors = _one(names=("A", "B"))
    rule = _rule(f"binary-{fn}", {"x": "c"}, maps, tensors, {"op": "binary", "fn": fn, "lhs": "A", "rhs": "B"})
    _expect(check_operator(rule, cases=100), may_be_invalid=False)


@pytest.mark.parametrize("fn", ["and", "or"])
def test_binary_bool(fn):
    maps, tensors = _one(names=("A", "B"), elem="bool")
    rule = _rule(f"binary-{fn}", {"x": "c"}, maps, tensors, {"op": "binary", "fn": fn, "lhs": "A", "rhs": "B"})
    _expect(check_operator(rule, cases=100), may_be_invalid=False)


def test_binary_shape_mismatch_is_invalid():
    rule = _rule("binary-shapes", {"x": "c"}, [("s", "x"), ("t", "x")],
                 [{"name": "A", "shape": {"x": "s"}}, {"name": "B", "shape": {"x": "t"}}],
                 {"op": "binary", "fn": "add", "lhs": "A", "rhs": "B"})
    _expect(check_operator(rule))


def test_pad_low():
    maps, tensors = _one(extra=[("l", "x")])
    rule = _rule("pad-low", {"x": "c"}, maps, tensors, {"op": "pad_low", "arg": "Y", "value": 7, "low": {"x": "l"}})
    _expect(check_operator(rule))


def test_pad():
    maps, tensors = _one(extra=[("l", "x"), ("h", "x"), ("i", "x")])
    rule = _rule("pad", {"x": "c"}, maps, tensors,
                 {"op": "pad", "arg": "Y", "value": -1, "low": {"x": "l"}, "high": {"x": "h"}, "interior": {"x": "i"}})
    _expect(check_operator(rule))


def test_slice():
    maps, tensors = _one(extra=[("b", "x"), ("e", "x"), ("k", "x")])
    rule = _rule("slice", {"x": "c"}, maps, tensors,
                 {"op": "slice", "arg": "Y", "start": {"x": "b"}, "end": {"x": "e"}, "stride": {"x": "k"}})
    _expect(check_operator(rule))


def test_dy_slice():
    maps, tensors = _one(extra=[("b", "x"), ("n", "x")])
    rule = _rule("dy-slice", {"x": "c"}, maps, tensors,
                 {"op": "dy_slice", "arg": "Y", "start": {"x": "b"}, "size": {"x": "n"}})
    _expect(check_operator(rule))


def test_dyup_slice():
    rule = _rule("dyup-slice", {"x": "c"}, [("s", "x"), ("u", "x"), ("b", "x")],
                 [{"name": "Y", "shape": {"x": "s"}}, {"name": "U", "shape": {"x": "u"}}],
                 {"op": "dyup_slice", "arg": "Y", "update": "U", "start": {"x": "b"}})
    _expect(check_operator(rule))


@pytest.mark.parametrize("fn", ["add", "max", "min"])
def test_reduce(fn):
    rule = _rule(f"reduce-{fn}", {"x": "c", "y": "d"}, [("s", "x"), ("n", "y"), ("i", "x", "index")],
                 [{"name": "Y", "shape": {"x": "s", "y": "n"}}],
                 {"op": "reduce", "fn": fn, "arg": "Y", "indices": {"x": "i"}})
    _expect(check_operator(rule, cases=100), may_be_invalid=(fn != "add"))


def test_concat():
    rule = _rule("concat", {"x": "c", "y": "d"}, [("a", "x"), ("b", "x"), ("n", "y"), ("m", "y")],
                 [{"name": "A", "shape": {"x": "a", "y": "n"}}, {"name": "B", "shape": {"x": "b", "y": "m"}}],
                 {"op": "concat", "lhs": "A", "rhs": "B", "axis": "x"},
                 rclasses=[{"name": "c", "singleton": True}, "d"])
    _expect(check_operator(rule))


def test_dot():
    rule = _rule("dot", {"x": "c1", "k": "c2", "b": "c3", "y": "c4"},
                 [("sx", "x"), ("sk", "k"), ("tk", "k"), ("sb", "b"), ("sy", "y")],
                 [{"name": "A", "shape": {"b": "sb", "x": "sx", "k": "sk"}},
                  {"name": "B", "shape": {"b": "sb", "k": "tk", "y": "sy"}}],
                 {"op": "dot", "lhs": "A", "rhs": "B", "contract": ["k"], "batch": ["b"]})
    _expect(check_operator(rule, rank_cap=2))


def test_dot_outer_product():
    rule = _rule("dot-outer", {"x": "c1", "y": "c2"}, [("sx", "x"), ("sy", "y")],
                 [{"name": "A", "shape": {"x": "sx"}}, {"name": "B", "shape": {"y": "sy"}}],
                 {"op": "dot", "lhs": "A", "rhs": "B", "contract": [], "batch": []})
    _expect(check_operator(rule, rank_cap=2), may_be_invalid=False)


def test_conv_base():
    rule = _rule("conv-base", {"b": "cb", "f": "cf", "o": "co", "x": "cx"},
                 [("sb", "b"), ("sf", "f"), ("so", "o"), ("sx", "x"), ("wx", "x"), ("k", "x")],
                 [{"name": "t", "shape": {"b": "sb", "f": "sf", "x": "sx"}},
                  {"name": "w", "shape": {"o": "so", "f": "sf", "x": "wx"}}],
                 {"op": "conv_base", "input": "t", "weight": "w", "feature": ["f"], "stride": {"x": "k"}})
    _expect(check_operator(rule, rank_cap=2))


def test_conv():
    rule = _rule("conv", {"b": "cb", "f": "cf", "o": "co", "x": "cx"},
                 [("sb", "b"), ("sf", "f"), ("so", "o"), ("sx", "x"), ("wx", "x"), ("l", "x"), ("h", "x"),
                  ("di", "x"), ("dw", "x"), ("k", "x")],
                 [{"name": "t", "shape": {"b": "sb", "f": "sf", "x": "sx"}},
                  {"name": "w", "shape": {"o": "so", "f": "sf", "x": "wx"}}],
                 {"op": "conv", "input": "t", "weight": "w", "feature": ["f"], "low": {"x": "l"},
                  "high": {"x": "h"}, "lhs_dilation": {"x": "di"}, "rhs_dilation": {"x": "dw"},
                  "stride": {"x": "k"}},
                 rclasses=[{"name": "cb", "singleton": True}, {"name": "cf", "singleton": True},
                           {"name": "co", "singleton": True}, "cx"])
    _expect(check_operator(rule, rank_cap=2))


def test_reverse():
    rule = _rule("reverse", {"x": "c", "y": "d"}, [("s", "x"), ("n", "y")],
                 [{"name": "Y", "shape": {"x": "s", "y": "n"}}], {"op": "reverse", "arg": "Y", "axes": ["x"]})
    _expect(check_operator(rule), may_be_invalid=False)


def test_select():
    rule = _rule("select", {"x": "c"}, [("s", "x")],
                 [{"name": "P", "shape": {"x": "s"}, "elem": "bool"}, {"name": "A", "shape": {"x": "s"}},
                  {"name": "B", "shape": {"x": "s"}}],
                 {"op": "select", "pred": "P", "on_true": "A", "on_false": "B"})
    _expect(check_operator(rule), may_be_invalid=False)


def test_clamp():
    maps, tensors = _one(names=("L", "Y", "H"))
    rule = _rule("clamp", {"x": "c"}, maps, tensors, {"op": "clamp", "lo": "L", "arg": "Y", "hi": "H"})
    _expect(check_operator(rule), may_be_invalid=False)


def test_nested_pipeline():
    """Operators composed: slice of a padded, reversed tensor."""
    maps, tensors = _one(extra=[("l", "x"), ("i", "x"), ("b", "x"), ("e", "x")])
    rule = _rule("nested", {"x": "c"}, maps, tensors,
                 {"op": "slice", "start": {"x": "b"}, "end": {"x": "e"}, "stride": {"x": 1},
                  "arg": {"op": "pad", "value": 0, "low": {"x": "l"}, "high": {"x": 0}, "interior": {"x": "i"},
                          "arg": {"op": "reverse", "arg": "Y", "axes": ["x"]}}})
    _expect(check_operator(rule))
