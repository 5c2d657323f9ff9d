import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evidentia.diffcore import PRIMITIVES, Tape, Tensor, check_gradients, ops
from evidentia.diffcore.tape import active_tape
from evidentia.errors import ContractError, ShapeError

FD_TOL = 1e-4


def _readout(out, rng):
    # a fixed random projection so every output entry carries gradient
    w = rng.normal(size=out.shape)
    return lambda o: ops.sum(ops.mul(o, w))


def _unary(fn, low=-2.0, high=2.0, shape=(3, 2), away_from_zero=False):
    def build(rng):
        v = rng.uniform(low, high, size=shape)
        if away_from_zero:
            v = np.where(np.abs(v) < 0.1, 0.5, v)
        x = Tensor(v, requires_grad=True)
        read = _readout(fn(x), rng)
        return [x], lambda: read(fn(x))
    return build


def _binary(fn, b_low=-2.0, b_high=2.0, b_shape=(1, 2)):
    def build(rng):
        a = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        b = Tensor(rng.uniform(b_low, b_high, size=b_shape), requires_grad=True)
        read = _readout(fn(a, b), rng)
        return [a, b], lambda: read(fn(a, b))
    return build


def _layer_norm(rng):
    x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    g = Tensor(rng.normal(size=5), requires_grad=True)
    b = Tensor(rng.normal(size=5), requires_grad=True)
    f = lambda: ops.layer_norm(x, g, b)
    read = _readout(f(), rng)
    return [x, g, b], lambda: read(f())


def _conv(rng):
    x = Tensor(rng.normal(size=(2, 2, 5, 5)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=3), requires_grad=True)
    stride = int(rng.integers(1, 3))
    f = lambda: ops.conv2d(x, w, b, stride=stride, padding=1)
    read = _readout(f(), rng)
    return [x, w, b], lambda: read(f())


def _concat(rng):
    a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    f = lambda: ops.concat([a, b], axis=-1)
    read = _readout(f(), rng)
    return [a, b], lambda: read(f())


def _matmul(rng):
    a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    read = _readout(ops.matmul(a, b), rng)
    return [a, b], lambda: read(ops.matmul(a, b))


def _getitem(rng):
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    idx = (np.array([0, 2, 2, 3]), slice(None))  # repeated row exercises accumulation
    read = _readout(ops.getitem(x, idx), rng)
    return [x], lambda: read(ops.getitem(x, idx))


CASES = {
    "add": _binary(ops.add),
    "sub": _binary(ops.sub),
    "mul": _binary(ops.mul),
    "div": _binary(ops.div, 0.5, 2.0),
    "neg": _unary(ops.neg),
    "power": _unary(lambda x: ops.power(x, 3)),
    "abs": _unary(ops.abs, away_from_zero=True),
    "log": _unary(ops.log, 0.2, 3.0),
    "exp": _unary(ops.exp),
    "sqrt": _unary(ops.sqrt, 0.2, 3.0),
    "sigmoid": _unary(ops.sigmoid, -6, 6),
    "softplus": _unary(ops.softplus, -6, 6),
    "gelu": _unary(ops.gelu, -4, 4),
    "lgamma": _unary(ops.lgamma, 0.3, 6.0),
    "digamma": _unary(ops.digamma, 0.3, 6.0),
    "sum": _unary(lambda x: ops.sum(x, axis=0, keepdims=True)),
    "reshape": _unary(lambda x: ops.reshape(x, (2, 3))),
    "transpose": _unary(lambda x: ops.transpose(x, (1, 0))),
    "getitem": _getitem,
    "concat": _concat,
    "matmul": _matmul,
    "softmax": _unary(lambda x: ops.softmax(x, axis=-1), -3, 3, shape=(3, 4)),
    "layer_norm": _layer_norm,
    "conv2d": _conv,
}


def test_every_primitive_has_a_case():
    assert set(CASES) == set(PRIMITIVES)


@pytest.mark.parametrize("name", PRIMITIVES)
def test_primitive_matches_finite_differences(name):
    rng = np.random.default_rng(sum(map(ord, name)))
    worst = 0.0
    for _ in range(100):
        params, loss_fn = CASES[name](rng)
        err, _ = check_gradients(loss_fn, params)
        worst = max(worst, err)
    assert worst <= FD_TOL, f"{name}: max relative error {worst:.2e}"


def test_square_gradient():
    x = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        loss = x * x
    assert tape.backward(loss)[x] == pytest.approx(6.0)


def test_softplus_gradient_at_zero():
    x = Tensor(0.0, requires_grad=True)
    with Tape() as tape:
        loss = ops.softplus(x)
    assert loss.item() == pytest.approx(math.log(2))
    assert tape.backward(loss)[x] == pytest.approx(0.5)


def test_abs_backward_sign():
    x = Tensor(-3.0, requires_grad=True)
    with Tape() as tape:
        loss = ops.abs(x)
    assert tape.backward(loss)[x] == -1.0


def test_softmax_uniform_logits():
    np.testing.assert_allclose(ops.softmax(Tensor(np.zeros(4))).data, [0.25] * 4)


def test_softmax_is_stable_for_large_logits():
    out = ops.softmax(Tensor([1000.0, 0.0, -1000.0])).data
    assert np.all(np.isfinite(out)) and out[0] == pytest.approx(1.0)


def test_gradient_accumulates_over_reuse():
    x = Tensor(2.0, requires_grad=True)
    with Tape() as tape:
        loss = x * x + 3.0 * x
    assert tape.backward(loss)[x] == pytest.approx(7.0)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ContractError):
        tape.backward(y)


def test_untracked_values_record_nothing():
    with Tape() as tape:
        Tensor(1.0) + Tensor(2.0)
    assert tape.nodes == []


def test_no_tape_outside_context():
    assert active_tape() is None
    with Tape() as tape:
        assert active_tape() is tape
    assert active_tape() is None


def test_tapes_are_thread_local():
    seen = {}

    def worker():
        seen["inner"] = active_tape()

    with Tape():
        t = threading.Thread(target=worker)
        t.start()
        t.join()
    assert seen["inner"] is None


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
    with pytest.raises(ShapeError):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_conv2d_matches_direct_loops():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    out = ops.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 3, 3))
    for o in range(3):
        for i in range(3):
            for j in range(3):
                ref[0, o, i, j] = np.sum(xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_dropout_identity_in_eval_and_scaled_in_train():
    x = Tensor(np.ones(10000))
    assert ops.dropout(x, 0.1, None, training=False) is x
    y = ops.dropout(x, 0.1, np.random.default_rng(0), training=True).data
    assert set(np.unique(y)) <= {0.0, 1.0 / 0.9}
    assert y.mean() == pytest.approx(1.0, abs=0.02)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=8))
def test_softmax_sums_to_one(values):
    assert ops.softmax(Tensor(values)).data.sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=8))
def test_layer_norm_output_is_standardized(values):
    v = np.asarray(values)
    if np.ptp(v) < 1e-2:
        return
    out = ops.layer_norm(Tensor(v), Tensor(np.ones(len(v))), Tensor(np.zeros(len(v)))).data
    assert out.mean() == pytest.approx(0.0, abs=1e-9)
    assert out.var() == pytest.approx(v.var() / (v.var() + 1e-5), rel=1e-9)
