import itertools
import random

import numpy as np
import pytest

from rankverify import concrete
from rankverify.errors import EvaluationTooLarge


def _interp():
    return concrete.Interpreter({}, {})


def _tensor(axes, data):
    return concrete.ConcreteTensor(axes, np.array(data, dtype=object))


def _brute_conv(i, w, feature, stride):
    """Direct definition: out[b, o, p] = sum_f sum_k in[b, f, p*stride + k] * w[o, f, k]."""
    common = set(i.axes) & set(w.axes)
    spatial = sorted(common - feature)
    batch = [a for a in i.axes if a not in w.axes]
    outs = [a for a in w.axes if a not in i.axes]
    out_sp = {a: (i.sizes[a] - w.sizes[a]) // stride[a] + 1 for a in spatial}
    axes = sorted(batch + outs + spatial)
    sizes = {**{a: i.sizes[a] for a in batch}, **{a: w.sizes[a] for a in outs}, **out_sp}
    out = np.empty([sizes[a] for a in axes], dtype=object)
    inner = sorted(feature) + spatial
    for idx in np.ndindex(*out.shape):
        at = dict(zip(axes, idx))
        acc = 0
        ranges = [range(i.sizes[a]) for a in sorted(feature)] + [range(w.sizes[a]) for a in spatial]
        for pt in itertools.product(*ranges):
            k = dict(zip(inner, pt))
            ii = {a: at[a] * stride[a] + k[a] if a in spatial else k.get(a, at.get(a)) for a in i.axes}
            ww = {a: k.get(a, at.get(a)) for a in w.axes}
            acc += i.at(ii) * w.at(ww)
        out[idx] = acc
    return concrete.ConcreteTensor(axes, out)


@pytest.mark.parametrize("big", [False, True])
def test_vectorized_conv_matches_definition(big):
    rng = random.Random(7)
    scale = 2 ** 70 if big else 1  # forces the exact object path
    for _ in range(60):
        sx, wx, sy, wy = (rng.randint(1, 4) for _ in range(4))
        wx, wy = min(wx, sx), min(wy, sy)
        nf, nb, no = rng.randint(1, 2), rng.randint(1, 2), rng.randint(1, 2)
        i = _tensor(["b", "f", "x", "y"], [[[[rng.randint(-4, 4) * scale for _ in range(sy)] for _ in range(sx)]
                                            for _ in range(nf)] for _ in range(nb)])
        w = _tensor(["f", "o", "x", "y"], [[[[rng.randint(-4, 4) for _ in range(wy)] for _ in range(wx)]
                                            for _ in range(no)] for _ in range(nf)])
        stride = {"x": rng.randint(1, 3), "y": rng.randint(1, 3)}
        got = _interp()._direct_conv(i, w, {"f"}, stride)
        assert got == _brute_conv(i, w, {"f"}, stride)
        if big:
            assert all(type(v) is int for v in got.data.flat)


def test_int64_guard_rejects_overflow():
    small = np.array([1, 2, 3], dtype=object)
    assert concrete._as_int64(small, small) is not None
    huge = np.array([2 ** 40, 1], dtype=object)
    assert concrete._as_int64(huge, huge) is None
    assert concrete._as_int64(np.array([2 ** 70], dtype=object), small) is None


def test_pad_over_limit_raises_before_allocating():
    t = _tensor(["x", "y"], [[1]])
    far = {"x": 5000, "y": 5000}
    zero = {"x": 0, "y": 0}
    with pytest.raises(EvaluationTooLarge):
        _interp()._scatter_pad(t, 0, far, zero, zero, "pad")


def test_empty_window_with_huge_output_is_rejected():
    """A zero-sized window must not slip past the limit by zeroing the work estimate."""
    i = _tensor(["b", "f", "x"], np.zeros((1, 1, 5000), dtype=object))
    w = concrete.ConcreteTensor(["f", "o", "x"], np.zeros((1, 5000, 0), dtype=object))
    with pytest.raises(EvaluationTooLarge):
        _interp()._direct_conv(i, w, {"f"}, {"x": 1})


def test_dot_without_contraction_is_outer_product():
    a = _tensor(["x"], [1, 2])
    b = _tensor(["y"], [3, 4, 5])
    out = concrete._contract(a, b, set())
    assert out.axes == ("x", "y")
    assert out.data.tolist() == [[3, 4, 5], [6, 8, 10]]
