import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from avgzsl.errors import NonFiniteError, ShapeError
from avgzsl.services.tensor_core import (
    LayerParams,
    Tape,
    add,
    affine_forward,
    backward,
    finite_diff_gradient,
    hinge,
    max_relative_error,
    mean,
    relative_error,
    relu_forward,
    squared_error,
)


def layer(out_dim, in_dim, rng):
    return LayerParams(rng.standard_normal((out_dim, in_dim)), rng.standard_normal(out_dim))


def test_affine_forward_single_vector():
    lp = LayerParams(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([0.5, -0.5]))
    assert_array_equal(affine_forward(lp, np.array([1.0, 1.0])), [3.5, 6.5])


def test_affine_forward_rejects_wrong_width():
    lp = LayerParams.zeros(2, 3)
    with pytest.raises(ShapeError):
        affine_forward(lp, np.ones(4))


def test_relu_zeroes_negatives():
    assert_array_equal(relu_forward(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])


def test_squared_error_reductions():
    u = np.array([1.0, 2.0, 3.0, 4.0])
    v = np.zeros(4)
    assert float(squared_error(u, v, 'sum')) == 30.0
    assert float(squared_error(u, v, 'mean')) == 7.5


def test_hinge_clamps_at_zero():
    assert float(hinge(np.array(0.2), np.array(0.9), 0.5)) == 0.0
    assert_allclose(float(hinge(np.array(0.9), np.array(0.2), 0.5)), 1.2)


def test_mean_of_affine_gradient():
    # loss = mean(W x + b) over 2 outputs: dW = x / 2, db = 1 / 2
    lp = LayerParams(np.array([[1.0, -1.0], [2.0, 0.5]]), np.zeros(2))
    tape = Tape()
    x = tape.constant(np.array([3.0, -2.0]))
    loss = mean(affine_forward(lp, x))
    grads = backward(loss)
    assert_allclose(grads[lp].weight, [[1.5, -1.0], [1.5, -1.0]])
    assert_allclose(grads[lp].bias, [0.5, 0.5])


def test_shared_layer_gradients_accumulate(rng):
    shared = layer(3, 3, rng)
    x = rng.standard_normal(3)
    tape = Tape()
    once = affine_forward(shared, tape.constant(x))
    twice = affine_forward(shared, once)
    loss = mean(twice)
    grads = backward(loss)

    def f(layers):
        lp = layers[0]
        return float(np.mean(affine_forward(lp, affine_forward(lp, x))))

    numeric = finite_diff_gradient(f, [shared])
    assert max_relative_error([grads[shared]], numeric) < 1e-5


def test_unreached_layer_gets_zero_gradient(rng):
    used, unused = layer(2, 3, rng), layer(2, 3, rng)
    tape = Tape()
    loss = mean(affine_forward(used, tape.constant(rng.standard_normal(3))))
    grads = backward(loss, wrt=[used, unused])
    assert not np.any(grads[unused].weight)
    assert not np.any(grads[unused].bias)


def test_backward_needs_scalar(rng):
    tape = Tape()
    out = affine_forward(layer(2, 3, rng), tape.constant(np.ones(3)))
    with pytest.raises(ShapeError):
        backward(out)


def test_tape_rejects_non_finite_values():
    tape = Tape()
    with pytest.raises(NonFiniteError):
        tape.constant(np.array([1.0, np.inf]))


@pytest.mark.parametrize('reduction', ['mean', 'sum'])
def test_batched_mlp_gradient_matches_finite_differences(rng, reduction):
    l1, l2 = layer(5, 4, rng), layer(3, 5, rng)
    x = rng.standard_normal((6, 4))
    target = rng.standard_normal((6, 3))

    def forward(a, b, inputs):
        return mean(squared_error(affine_forward(b, relu_forward(affine_forward(a, inputs))), target, reduction))

    tape = Tape()
    grads = backward(forward(l1, l2, tape.constant(x)))
    numeric = finite_diff_gradient(lambda layers: float(forward(layers[0], layers[1], x)), [l1, l2])
    assert max_relative_error([grads[l1], grads[l2]], numeric) < 1e-5


def test_triplet_style_combination_gradient(rng):
    lp = layer(3, 4, rng)
    anchor, pos, neg = (rng.standard_normal((5, 4)) for _ in range(3))

    def forward(w, a, p, n):
        e_a, e_p, e_n = affine_forward(w, a), affine_forward(w, p), affine_forward(w, n)
        return mean(add(hinge(squared_error(e_a, e_p), squared_error(e_a, e_n), 1.0), squared_error(e_a, e_p)))

    tape = Tape()
    grads = backward(forward(lp, tape.constant(anchor), tape.constant(pos), tape.constant(neg)))
    numeric = finite_diff_gradient(lambda layers: float(forward(layers[0], anchor, pos, neg)), [lp])
    assert max_relative_error([grads[lp]], numeric) < 1e-5


def test_finite_diff_on_plain_array():
    grad = finite_diff_gradient(lambda p: float(np.sum(p ** 2)), np.array([1.0, -2.0, 0.5]))
    assert_allclose(grad, [2.0, -4.0, 1.0], rtol=1e-8)


def test_finite_diff_leaves_inputs_untouched(rng):
    lp = layer(2, 2, rng)
    before = lp.copy()
    finite_diff_gradient(lambda layers: float(np.sum(layers[0].weight ** 3)), [lp])
    assert lp.same_values(before)


def test_finite_diff_reports_non_finite_loss():
    with pytest.raises(NonFiniteError):
        finite_diff_gradient(lambda p: float('nan'), np.ones(2))


def test_relative_error_floor():
    assert float(relative_error(0.0, 0.0)) == 0.0
    assert_allclose(float(relative_error(1.0, 3.0)), 0.5)


def test_relu_is_idempotent(rng):
    for _ in range(100):
        x = rng.standard_normal((4, 7)) * rng.uniform(0.1, 100.0)
        once = relu_forward(x)
        assert_array_equal(relu_forward(once), once)


def test_affine_without_bias_is_linear(rng):
    lp = LayerParams(rng.standard_normal((5, 8)), np.zeros(5))
    for _ in range(100):
        x, y = rng.standard_normal((2, 8))
        a, b = rng.uniform(-3.0, 3.0, size=2)
        assert_allclose(affine_forward(lp, a * x + b * y),
                        a * affine_forward(lp, x) + b * affine_forward(lp, y), rtol=1e-10, atol=1e-12)


def test_backward_of_sum_is_sum_of_backwards(rng):
    l1, l2 = layer(4, 3, rng), layer(2, 4, rng)
    x = rng.standard_normal((6, 3))
    target = rng.standard_normal((6, 2))

    def reconstruction(tape):
        hidden = relu_forward(affine_forward(l1, tape.constant(x)))
        return mean(squared_error(affine_forward(l2, hidden), target))

    def activity(tape):
        return mean(squared_error(affine_forward(l1, tape.constant(x)), np.zeros((6, 4)), 'sum'))

    tape = Tape()
    combined = backward(add(reconstruction(tape), activity(tape)), wrt=[l1, l2])
    first = backward(reconstruction(Tape()), wrt=[l1, l2])
    second = backward(activity(Tape()), wrt=[l1, l2])
    for lp in (l1, l2):
        for got, a, b in zip(combined[lp].arrays(), first[lp].arrays(), second[lp].arrays()):
            assert_allclose(got, a + b, rtol=1e-12, atol=1e-14)


@pytest.mark.skipif(np.finfo(np.longdouble).eps >= np.finfo(np.float64).eps,
                    reason='long double is plain double on this platform')
def test_finite_diff_resolves_cancelling_bias(rng):
    # the bias enters both sides of the distance, so its gradient is exactly zero
    lp = layer(4, 3, rng)
    x, y = 0.5 * rng.standard_normal((2, 5, 3))

    def forward(w, a, b):
        return mean(squared_error(affine_forward(w, a), affine_forward(w, b)))

    tape = Tape()
    grads = backward(forward(lp, tape.constant(x), tape.constant(y)))
    assert not np.any(grads[lp].bias)
    numeric = finite_diff_gradient(lambda layers: forward(layers[0], x, y), [lp])
    assert max_relative_error([grads[lp]], numeric) < 1e-4
