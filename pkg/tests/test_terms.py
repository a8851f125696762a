import itertools

from hypothesis import given, settings
from hypothesis import strategies as st

from rankverify import terms as T

x, y, z = T.sym("x"), T.sym("y"), T.sym("z")


def test_hash_consing_shares_nodes():
    assert T.add(x, T.lit(1)) is T.add(T.lit(1), x)
    assert T.mul(x, y) is T.mul(y, x)


def test_polynomial_normal_form():
    assert T.sub(T.add(x, y), y) is x
    assert T.mul(T.add(x, T.lit(1)), T.lit(2)) is T.add(T.mul(T.lit(2), x), T.lit(2))
    assert T.sub(T.mul(x, y), T.mul(y, x)) is T.lit(0)


def test_comparisons_fold_constants():
    assert T.ge(T.add(x, T.lit(2)), T.add(x, T.lit(1))) is T.TRUE
    assert T.eq(T.add(x, y), T.add(y, x)) is T.TRUE
    assert T.lt(x, x) is T.FALSE


def test_ite_folding():
    assert T.ite(T.TRUE, x, y) is x
    assert T.ite(T.ge(x, y), z, z) is z


def test_euclidean_div_mod():
    for a, b in itertools.product(range(-7, 8), [-3, -2, -1, 1, 2, 3]):
        q, r = T.ediv(a, b), T.emod(a, b)
        assert a == b * q + r
        assert 0 <= r < abs(b)


def test_div_mod_literals_fold():
    assert T.div(T.lit(-7), T.lit(2)) is T.lit(-4)
    assert T.mod(T.lit(-7), T.lit(2)) is T.lit(1)


def test_reduction_evaluates_and_binds():
    i = T.sym("i")
    body = T.read("A", [i], T.INT)
    r = T.red("add", [(i, x)], body)
    assert i not in T.free_symbols(r)
    assert x in T.free_symbols(r)
    assert T.evaluate(r, {"x": 4}, {"A": lambda idx: idx[0] * 10}) == 60
    assert T.evaluate(r, {"x": 0}, {"A": lambda idx: 1}) == 0


def test_quantifiers():
    i = T.sym("i")
    every = T.forall_in([(i, x)], T.lt(i, y))
    some = T.exists_in([(i, x)], T.eq(i, y))
    assert T.evaluate(every, {"x": 3, "y": 3}) is True
    assert T.evaluate(every, {"x": 4, "y": 3}) is False
    assert T.evaluate(some, {"x": 4, "y": 3}) is True
    assert T.evaluate(some, {"x": 3, "y": 3}) is False


def test_untaken_branch_may_fail():
    guarded = T.ite(T.gt(y, T.lit(0)), T.div(x, y), T.lit(-1))
    assert T.evaluate(guarded, {"x": 5, "y": 0}) == -1
    assert T.evaluate(guarded, {"x": 5, "y": 2}) == 2


def test_substitute():
    t = T.add(T.mul(x, y), z)
    assert T.substitute(t, {y: T.lit(2)}) is T.add(T.mul(T.lit(2), x), z)


_small = st.integers(-6, 6)


def _build(draw_ops, leaves):
    stack = list(leaves)
    for op, a, b in draw_ops:
        u, v = stack[a % len(stack)], stack[b % len(stack)]
        stack.append({"add": T.add, "sub": T.sub, "mul": T.mul, "min": T.min_, "max": T.max_}[op](u, v))
    return stack[-1]


def _py(draw_ops, leaves):
    stack = list(leaves)
    fns = {"add": lambda a, b: a + b, "sub": lambda a, b: a - b, "mul": lambda a, b: a * b,
           "min": min, "max": max}
    for op, a, b in draw_ops:
        stack.append(fns[op](stack[a % len(stack)], stack[b % len(stack)]))
    return stack[-1]


_programs = st.lists(st.tuples(st.sampled_from(["add", "sub", "mul", "min", "max"]),
                               st.integers(0, 20), st.integers(0, 20)), min_size=1, max_size=8)


@settings(max_examples=300, deadline=None)
@given(_programs, _small, _small, _small)
def test_simplification_preserves_value(prog, a, b, c):
    term = _build(prog, [x, y, z, T.lit(2)])
    assert T.evaluate(term, {"x": a, "y": b, "z": c}) == _py(prog, [a, b, c, 2])


@settings(max_examples=300, deadline=None)
@given(_programs, _small, _small, _small, st.sampled_from([">=", ">", "=="]))
def test_comparison_simplification_preserves_truth(prog, a, b, c, rel):
    term = _build(prog, [x, y, z, T.lit(1)])
    fn = {">=": T.ge, ">": T.gt, "==": T.eq}[rel]
    want = _py(prog, [a, b, c, 1])
    got = T.evaluate(fn(term, y), {"x": a, "y": b, "z": c})
    assert got == {">=": want >= b, ">": want > b, "==": want == b}[rel]
