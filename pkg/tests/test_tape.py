from __future__ import annotations

import numpy as np
import pytest

from src.errors import NonScalarRootError, TapeShapeError
from src.utils.tape import Tape, finite_difference_grad


def _away_from_zero(rng, shape, lo=0.2, hi=1.5):
    return rng.uniform(lo, hi, size=shape) * rng.choice([-1.0, 1.0], size=shape)


# op kind, input factory, payload
CASES = {
    "add": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(4,))], None),
    "sub": (lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 3))], None),
    "elementwise-mul": (lambda r: [r.normal(size=(3, 1)), r.normal(size=(1, 4))], None),
    "div": (lambda r: [r.normal(size=(3,)), r.uniform(0.5, 2.0, size=(3,))], None),
    "matmul": (lambda r: [r.normal(size=(2, 3, 4)), r.normal(size=(4, 5))], None),
    "concat": (lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 2))], -1),
    "LeakyReLU": (lambda r: [_away_from_zero(r, (5,))], 0.2),
    "ReLU": (lambda r: [_away_from_zero(r, (5,))], None),
    "softplus": (lambda r: [r.normal(size=(4,))], None),
    "exp": (lambda r: [r.normal(size=(4,))], None),
    "log": (lambda r: [r.uniform(0.5, 3.0, size=(4,))], None),
    "square": (lambda r: [r.normal(size=(2, 2))], None),
    "reduce-sum": (lambda r: [r.normal(size=(3, 4))], 1),
    "softmax-row": (lambda r: [r.normal(size=(3, 4))], np.array([[1, 0, 1, 1], [0, 1, 0, 0], [1, 1, 1, 1]], bool)),
    "reshape": (lambda r: [r.normal(size=(2, 6))], (3, 4)),
    "broadcast": (lambda r: [r.normal(size=(1, 3))], (4, 3)),
    "transpose": (lambda r: [r.normal(size=(2, 3, 4))], None),
    "slice": (lambda r: [r.normal(size=(3, 6))], (1, 4)),
}


def _weighted_root(kind, payload, values, weights):
    tape = Tape()
    ids = [tape.leaf(v) for v in values]
    out = tape.record(kind, ids, payload)
    root = tape.sum(tape.mul(out, tape.constant(weights)))
    return tape, ids, root


@pytest.mark.parametrize("kind", sorted(CASES))
@pytest.mark.parametrize("seed", range(6))
def test_backward_matches_finite_differences(kind, seed):
    make, payload = CASES[kind]
    rng = np.random.default_rng(seed)
    values = make(rng)
    scratch = Tape()
    out_shape = scratch.value(scratch.record(kind, [scratch.leaf(v) for v in values], payload)).shape
    weights = rng.normal(size=out_shape)

    tape, ids, root = _weighted_root(kind, payload, values, weights)
    grads = tape.backward(root)
    for pos, leaf in enumerate(ids):
        def f(x, pos=pos):
            vals = list(values)
            vals[pos] = x
            t, _, r = _weighted_root(kind, payload, vals, weights)
            return t.value(r)

        fd = finite_difference_grad(f, values[pos], eps=1e-6)
        err = np.linalg.norm(grads[leaf] - fd) / max(np.linalg.norm(fd), 1e-8)
        assert grads[leaf].shape == np.shape(values[pos])
        assert err < 1e-4, f"{kind} input {pos}: relative error {err}"


def test_square_value_and_gradient():
    tape = Tape()
    x = tape.leaf(3.0)
    y = tape.square(x)
    assert tape.value(y) == 9.0
    assert tape.backward(y)[x] == pytest.approx(6.0)


def test_concat_shape():
    tape = Tape()
    out = tape.record("concat", [tape.leaf([1.0, 2.0]), tape.leaf([3.0, 4.0])])
    np.testing.assert_array_equal(tape.value(out), [1.0, 2.0, 3.0, 4.0])


def test_softmax_of_equal_scores_is_uniform():
    tape = Tape()
    out = tape.record("softmax-row", [tape.leaf([1.0, 1.0])])
    np.testing.assert_allclose(tape.value(out), [0.5, 0.5], rtol=0, atol=1e-15)


def test_sum_of_softmax_has_zero_gradient(rng):
    tape = Tape()
    z = tape.leaf(rng.normal(size=6))
    root = tape.sum(tape.softmax(z))
    np.testing.assert_allclose(tape.backward(root)[z], np.zeros(6), atol=1e-12)


def test_softmax_rows_are_normalized(rng):
    for _ in range(20):
        x = rng.normal(scale=5.0, size=(4, 7))
        mask = rng.random((4, 7)) < 0.5
        mask[:, 0] = True
        tape = Tape()
        y = tape.value(tape.softmax(tape.leaf(x), mask))
        assert np.all(y >= 0)
        assert np.all(y[~mask] == 0)
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, rtol=0, atol=1e-12)


def test_fully_masked_row_is_rejected():
    tape = Tape()
    x = tape.leaf(np.zeros((2, 2)))
    with pytest.raises(TapeShapeError):
        tape.softmax(x, np.array([[True, False], [False, False]]))


def test_gaussian_nll_gradient_matches_finite_differences(rng):
    mu0 = rng.normal(size=(4, 3))
    s0 = rng.normal(size=(4, 3))
    y = rng.normal(size=(4, 3))

    def build(mu_v, s_v):
        tape = Tape()
        mu = tape.leaf(mu_v)
        s = tape.leaf(s_v)
        sigma2 = tape.add(tape.softplus(s), tape.constant(1e-6))
        sq = tape.square(tape.sub(tape.constant(y), mu))
        root = tape.scale(tape.sum(tape.add(tape.log(sigma2), tape.div(sq, sigma2))), 0.5 / 4)
        return tape, mu, s, root

    def loss(mu_v, s_v):
        t, _, _, r = build(mu_v, s_v)
        return t.value(r)

    tape, mu, s, root = build(mu0, s0)
    grads = tape.backward(root)
    fd_mu = finite_difference_grad(lambda m: loss(m, s0), mu0)
    fd_s = finite_difference_grad(lambda v: loss(mu0, v), s0)
    np.testing.assert_allclose(grads[mu], fd_mu, rtol=1e-4, atol=1e-8)
    np.testing.assert_allclose(grads[s], fd_s, rtol=1e-4, atol=1e-8)


def test_kinks_take_positive_side_slope():
    tape = Tape()
    x = tape.leaf([0.0, -1.0, 2.0])
    root = tape.sum(tape.leaky_relu(x, 0.2))
    np.testing.assert_array_equal(tape.backward(root)[x], [1.0, 0.2, 1.0])
    tape = Tape()
    x = tape.leaf([0.0, -1.0])
    np.testing.assert_array_equal(tape.backward(tape.sum(tape.relu(x)))[x], [1.0, 0.0])


def test_leaky_relu_negative_slope():
    tape = Tape()
    assert tape.value(tape.leaky_relu(tape.leaf(-1.0), 0.2)) == pytest.approx(-0.2)


def test_non_scalar_root_rejected():
    tape = Tape()
    x = tape.leaf([1.0, 2.0])
    with pytest.raises(NonScalarRootError):
        tape.backward(tape.square(x))


def test_shape_mismatch_names_the_op():
    tape = Tape()
    a = tape.leaf(np.ones((2, 3)))
    b = tape.leaf(np.ones((4, 5)))
    with pytest.raises(TapeShapeError) as err:
        tape.matmul(a, b)
    assert err.value.op_kind == "matmul"
    assert (2, 3) in err.value.dims and (4, 5) in err.value.dims


def test_inputs_must_already_be_recorded():
    tape = Tape()
    tape.leaf(1.0)
    with pytest.raises(ValueError):
        tape.record("square", [5])


def test_unknown_op_rejected():
    tape = Tape()
    with pytest.raises(ValueError):
        tape.record("tanh", [tape.leaf(1.0)])


def test_node_inputs_reference_earlier_nodes(rng):
    tape = Tape()
    x = tape.leaf(rng.normal(size=(3, 3)))
    y = tape.softmax(tape.matmul(x, tape.transpose(x)))
    tape.sum(tape.mul(y, x))
    for idx, node in enumerate(tape.nodes):
        assert all(i < idx for i in node.inputs)


def test_replay_is_bitwise_identical(rng):
    tape = Tape()
    x = tape.leaf(rng.normal(size=(2, 4, 3)))
    w = tape.leaf(rng.normal(size=(3, 5)))
    h = tape.relu(tape.matmul(x, w))
    tape.sum(tape.log(tape.softplus(tape.softmax(h))))
    for node, value in zip(tape.nodes, tape.replay()):
        np.testing.assert_array_equal(node.value, value)


def test_constants_receive_no_gradient():
    tape = Tape()
    x = tape.leaf(2.0)
    c = tape.constant(5.0)
    grads = tape.backward(tape.mul(x, c))
    assert set(grads) == {x}
    assert grads[x] == pytest.approx(5.0)


def test_finite_difference_examples():
    assert finite_difference_grad(lambda x: float(x ** 2), 3.0) == pytest.approx(6.0, abs=1e-6)
    np.testing.assert_array_equal(finite_difference_grad(lambda x: 4.0, np.ones(3)), np.zeros(3))
    with pytest.raises(ValueError):
        finite_difference_grad(lambda x: 0.0, 1.0, eps=0.0)
