import itertools
import random

from rankverify import split
from rankverify import terms as T

a, b, c, d = (T.sym(n) for n in "abcd")


def _smt_eval(t, env, table):
    """Evaluate with SMT-LIB division: x/0 and x mod 0 are an arbitrary fixed function of x."""
    memo = {}
    for n in T.walk(t):
        a = [memo[x] for x in n.args]
        op = n.op
        if op == "lit":
            v = n.val
        elif op == "sym":
            v = env[n.val]
        elif op == "add":
            v = sum(a)
        elif op == "mul":
            v = 1
            for x in a:
                v *= x
        elif op in ("div", "mod"):
            if a[1] == 0:
                v = table.setdefault((op, a[0]), table["rng"].randint(-9, 9))
            else:
                v = T.ediv(a[0], a[1]) if op == "div" else T.emod(a[0], a[1])
        elif op in ("min", "max"):
            v = min(a) if op == "min" else max(a)
        elif op == "ge":
            v = a[0] >= a[1]
        elif op == "gt":
            v = a[0] > a[1]
        elif op == "eq":
            v = a[0] == a[1]
        elif op == "and":
            v = all(a)
        elif op == "or":
            v = any(a)
        elif op == "not":
            v = not a[0]
        elif op == "ite":
            v = a[1] if a[0] else a[2]
        else:
            raise AssertionError(f"unexpected {op}")
        memo[n] = v
    return memo[t]


def _holds(lem, env, seed=0):
    rng = random.Random(seed)
    return all(_smt_eval(lem, env, {"rng": rng}) is True for _ in range(4))


def _assignments(names, lo=-6, hi=6, count=400, seed=0):
    rng = random.Random(seed)
    for _ in range(count):
        yield {n: rng.randint(lo, hi) for n in names}


DIVMOD_CASES = [
    T.div(T.add(T.mul(a, b), c), b),
    T.mod(T.add(T.mul(a, b), c), b),
    T.div(T.add(T.mul(a, b, c), d), T.mul(b, c)),
    T.mod(T.add(T.mul(a, b, c), d), T.mul(b, c)),
    T.div(T.sub(T.lit(0), a), b),
    T.mod(T.sub(T.lit(0), a), b),
    T.div(T.add(T.mul(a, T.add(b, T.lit(1))), c), T.add(b, T.lit(1))),
    T.mod(T.add(a, T.mul(T.lit(3), b, c)), T.mul(b, c)),
    T.div(a, T.mul(b, c)),
    T.mod(a, T.mul(b, c)),
]


def test_divmod_lemmas_hold_everywhere():
    seen = 0
    for term in DIVMOD_CASES:
        lemmas = split.divmod_lemmas([term])
        seen += len(lemmas)
        for env in _assignments("abcd"):
            for lem in lemmas:
                assert _holds(lem, env), (lem, env)
    assert seen >= len(DIVMOD_CASES)


def test_divmod_lemmas_exhaustive_small_box():
    lemmas = [lem for t in DIVMOD_CASES for lem in split.divmod_lemmas([t])]
    for vals in itertools.product(range(-3, 4), repeat=4):
        env = dict(zip("abcd", vals))
        for lem in lemmas:
            assert _holds(lem, env), (lem, env)


def _rd(name, *idx):
    return T.read(name, idx, T.INT)


SPLIT_CASES = [
    (T.ite(T.ge(a, b), _rd("X", a), T.lit(0)), T.ite(T.ge(a, b), _rd("X", c), T.lit(0))),
    (T.ite(T.ge(a, T.lit(0)), _rd("X", a), T.lit(0)), T.ite(T.gt(a, T.lit(-1)), _rd("X", c), T.lit(0))),
    (T.mul(_rd("X", a), _rd("Y", b)), T.mul(_rd("Y", c), _rd("X", d))),
    (T.ite(T.and_(T.ge(a, T.lit(0)), T.ge(b, T.lit(0))), _rd("X", a, b), T.lit(1)),
     T.ite(T.and_(T.ge(b, T.lit(0)), T.ge(c, T.lit(0))), _rd("X", c, b), T.lit(1))),
]


def test_split_pieces_imply_goal():
    """Whenever every piece holds, the original equality holds too."""
    tensors = {"X": lambda idx: (sum(idx) * 7) % 5, "Y": lambda idx: (idx[0] * 3) % 4 - 1}
    for lhs, rhs in SPLIT_CASES:
        pieces = split.split_eq(lhs, rhs)
        assert pieces
        goal = T.eq(lhs, rhs)
        for env in _assignments("abcd", -3, 3, 800):
            ok = all(T.evaluate(T.implies(T.and_(*g), p), env, tensors) for g, p in pieces)
            if ok:
                assert T.evaluate(goal, env, tensors), (lhs, rhs, env)


def test_relevant_keeps_connected_assumptions():
    assume = T.and_(T.ge(a, b), T.ge(b, T.lit(0)), T.ge(d, T.lit(3)))
    kept = T.conjuncts(split.relevant(assume, T.eq(a, T.lit(1))))
    assert T.ge(a, b) in kept and T.ge(b, T.lit(0)) in kept
    assert T.ge(d, T.lit(3)) not in kept
