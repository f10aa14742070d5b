import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from s2rcgcn.errors import ContractError, GradientError, NonFiniteError, ShapeError
from s2rcgcn.numkit import BatchNorm, Conv1d, Conv2d, Tensor, check_gradients, make_rng, ops
from s2rcgcn.numkit.gradcheck import numeric_grad, relative_error


def param(rng, *shape):
    return Tensor(rng.uniform(-1, 1, size=shape), requires_grad=True)


def probe(rng, shape):
    """Random projection turning a tensor output into a scalar loss."""
    return rng.uniform(-1, 1, size=shape)


# ---------------------------------------------------------------- matmul


def test_matmul_identity():
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ops.matmul(Tensor(np.eye(2)), b).data, b.data)


def test_matmul_dot():
    assert ops.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_gradient():
    rng = make_rng(1)
    a, b = param(rng, 3, 3), param(rng, 3, 3)
    assert check_gradients(lambda: ops.sum(ops.matmul(a, b)), [a, b]) < 1e-6
    # closed form d/da sum(ab) = 1 b^T
    a.grad = None
    ops.sum(ops.matmul(a, b)).backward()
    np.testing.assert_allclose(a.grad, np.ones((3, 3)) @ b.data.T)


# ---------------------------------------------------------------- conv


def test_conv1d_delta_kernel_is_identity():
    x = Tensor(make_rng(2).uniform(-1, 1, size=(2, 1, 6)))
    k = Tensor(np.array([[[0.0, 1.0, 0.0]]]))
    np.testing.assert_array_equal(ops.conv1d(x, k, padding=1).data, x.data)


def test_conv1d_sliding_sum():
    out = ops.conv1d(Tensor([[[1.0, 2.0, 3.0]]]), Tensor([[[1.0, 1.0]]]))
    assert out.data.tolist() == [[[3.0, 5.0]]]


def test_conv1d_is_cross_correlation():
    # no flip: kernel [1, 0] picks the left element of each window
    out = ops.conv1d(Tensor([[[1.0, 2.0, 3.0]]]), Tensor([[[1.0, 0.0]]]))
    assert out.data.tolist() == [[[1.0, 2.0]]]


def test_conv1d_kernel_too_large():
    with pytest.raises(ShapeError):
        ops.conv1d(Tensor(np.zeros((1, 1, 3))), Tensor(np.zeros((1, 1, 4))))


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 2), (2, 1), (3, 0)])
def test_conv1d_gradient(stride, padding):
    rng = make_rng(3)
    x, k, b = param(rng, 2, 3, 9), param(rng, 4, 3, 3), param(rng, 4)
    w = probe(rng, ops.conv1d(x, k, b, stride, padding).shape)
    fn = lambda: ops.weighted_sum(ops.conv1d(x, k, b, stride, padding), w)  # noqa: E731
    assert check_gradients(fn, [x, k, b]) < 1e-6


def test_conv2d_delta_kernel_is_identity():
    x = Tensor(make_rng(4).uniform(-1, 1, size=(1, 1, 5, 5)))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(ops.conv2d(x, Tensor(k), padding=1).data, x.data)


def test_conv2d_hand_sum():
    out = ops.conv2d(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]), Tensor(np.ones((1, 1, 2, 2))))
    assert out.data.tolist() == [[[[10.0]]]]


def test_conv2d_matches_loop_oracle():
    rng = make_rng(5)
    x = rng.uniform(-1, 1, size=(2, 3, 6, 7))
    k = rng.uniform(-1, 1, size=(4, 3, 3, 3))
    stride, pad = 2, 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (6 + 2 - 3) // 2 + 1, (7 + 2 - 3) // 2 + 1
    expect = np.zeros((2, 4, ho, wo))
    for n in range(2):
        for o in range(4):
            for i in range(ho):
                for j in range(wo):
                    expect[n, o, i, j] = (xp[n, :, i * 2 : i * 2 + 3, j * 2 : j * 2 + 3] * k[o]).sum()
    got = ops.conv2d(Tensor(x), Tensor(k), stride=stride, padding=pad).data
    np.testing.assert_allclose(got, expect, atol=1e-12)


@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1), (1, 0)])
def test_conv2d_gradient(stride, padding):
    rng = make_rng(6)
    x, k, b = param(rng, 2, 2, 5, 5), param(rng, 3, 2, 3, 3), param(rng, 3)
    w = probe(rng, ops.conv2d(x, k, b, stride, padding).shape)
    fn = lambda: ops.weighted_sum(ops.conv2d(x, k, b, stride, padding), w)  # noqa: E731
    assert check_gradients(fn, [x, k, b]) < 1e-6


# ---------------------------------------------------------------- batch norm


def test_batch_norm_zero_variance_gives_zero():
    bn = BatchNorm(2)
    out = bn(Tensor(np.full((4, 2), 3.0)), training=True)
    np.testing.assert_array_equal(out.data, np.zeros((4, 2)))


def test_batch_norm_hand_standardization():
    bn = BatchNorm(1, eps=0.0)
    out = bn(Tensor([[0.0], [2.0]]), training=True)
    np.testing.assert_allclose(out.data, [[-1.0], [1.0]])


def test_batch_norm_default_eps():
    bn = BatchNorm(1)
    out = bn(Tensor([[0.0], [2.0]]), training=True)
    np.testing.assert_allclose(out.data, [[-1.0], [1.0]], atol=1e-5)


def test_batch_norm_single_sample_train_is_error():
    with pytest.raises(ContractError):
        BatchNorm(3)(Tensor(np.zeros((1, 3))), training=True)


def test_batch_norm_running_stats_and_eval():
    bn = BatchNorm(1)
    bn(Tensor([[0.0], [2.0]]), training=True)
    # mean 1, unbiased var 2, momentum 0.1
    np.testing.assert_allclose(bn.running_mean, [0.1])
    np.testing.assert_allclose(bn.running_var, [0.9 + 0.2])
    out = bn(Tensor([[0.1]]), training=False)
    np.testing.assert_allclose(out.data, [[0.0]])


@pytest.mark.parametrize("shape", [(4, 3), (3, 2, 5), (2, 2, 3, 3)])
def test_batch_norm_gradient(shape):
    rng = make_rng(7)
    bn = BatchNorm(shape[1])
    bn.gamma.data[:] = rng.uniform(0.5, 1.5, size=shape[1])
    bn.beta.data[:] = rng.uniform(-1, 1, size=shape[1])
    x = param(rng, *shape)
    w = probe(rng, shape)
    fn = lambda: ops.weighted_sum(bn(x, training=True), w)  # noqa: E731
    assert check_gradients(fn, [x, bn.gamma, bn.beta]) < 1e-5
    fn_eval = lambda: ops.weighted_sum(bn(x, training=False), w)  # noqa: E731
    assert check_gradients(fn_eval, [x, bn.gamma, bn.beta]) < 1e-5


# ---------------------------------------------------------------- activations


def test_relu_and_sigmoid_values():
    assert ops.relu(Tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]
    assert ops.sigmoid(Tensor([0.0])).data.tolist() == [0.5]
    big = ops.sigmoid(Tensor([-800.0, 800.0])).data
    assert big[0] >= 0.0 and big[1] == 1.0


def test_softmax_no_overflow():
    np.testing.assert_array_equal(ops.softmax_rows(Tensor([[1000.0, 1000.0]])).data, [[0.5, 0.5]])
    np.testing.assert_allclose(ops.log_softmax_rows(Tensor([[1000.0, 1000.0]])).data, [[-np.log(2)] * 2])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 5), elements=st.floats(-50, 50)))
def test_softmax_properties(x):
    s = ops.softmax_rows(Tensor(x)).data
    assert np.all(np.abs(s.sum(axis=1) - 1.0) <= 1e-12)
    ls = ops.log_softmax_rows(Tensor(x)).data
    finite = s > 1e-300
    np.testing.assert_allclose(ls[finite], np.log(s[finite]), atol=1e-10)


def test_activation_gradients():
    rng = make_rng(8)
    x = param(rng, 4, 5)
    x.data[np.abs(x.data) < 1e-3] = 0.5  # keep away from the relu kink
    for op in (ops.relu, ops.sigmoid, ops.softmax_rows, ops.log_softmax_rows, ops.l2_normalize_rows):
        w = probe(rng, (4, 5))
        assert check_gradients(lambda: ops.weighted_sum(op(x), w), [x]) < 1e-6, op.__name__
    mask = rng.uniform(size=(4, 5)) < 0.5
    mask[:, 0] = True
    w = probe(rng, (4,))
    assert check_gradients(lambda: ops.weighted_sum(ops.logsumexp_rows(x, mask), w), [x]) < 1e-6


# ---------------------------------------------------------------- pooling


def test_global_avg_pool_constant():
    x = Tensor(np.full((2, 3, 4, 4), 2.5))
    np.testing.assert_array_equal(ops.global_avg_pool(x).data, np.full((2, 3), 2.5))


def test_max_pool1d_hand():
    assert ops.max_pool1d(Tensor([[[1.0, 3.0, 2.0, 5.0]]]), 2, 2).data.tolist() == [[[3.0, 5.0]]]


def test_max_pool_tie_routes_to_lowest_index():
    x = Tensor([[[4.0, 4.0, 1.0, 1.0]]], requires_grad=True)
    ops.sum(ops.max_pool1d(x, 2)).backward()
    assert x.grad.tolist() == [[[1.0, 0.0, 1.0, 0.0]]]
    y = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    ops.sum(ops.max_pool2d(y, 2)).backward()
    assert y.grad.tolist() == [[[[1.0, 0.0], [0.0, 0.0]]]]


def test_pool_gradients_away_from_ties():
    rng = make_rng(9)
    x1 = Tensor(rng.permutation(24).reshape(2, 2, 6) / 10.0, requires_grad=True)
    w1 = probe(rng, (2, 2, 3))
    assert check_gradients(lambda: ops.weighted_sum(ops.max_pool1d(x1, 2), w1), [x1]) < 1e-6
    w1b = probe(rng, (2, 2, 4))
    assert check_gradients(lambda: ops.weighted_sum(ops.max_pool1d(x1, 3, 1), w1b), [x1]) < 1e-6
    x2 = Tensor(rng.permutation(72).reshape(2, 1, 6, 6) / 10.0, requires_grad=True)
    w2 = probe(rng, (2, 1, 3, 3))
    assert check_gradients(lambda: ops.weighted_sum(ops.max_pool2d(x2, 2), w2), [x2]) < 1e-6
    x3 = param(rng, 2, 3, 4, 4)
    w3 = probe(rng, (2, 3))
    assert check_gradients(lambda: ops.weighted_sum(ops.global_avg_pool(x3), w3), [x3]) < 1e-6


# ---------------------------------------------------------------- backward engine


def test_sum_gives_ones():
    w = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    grads = ops.sum(w).backward()
    np.testing.assert_array_equal(grads[w], np.ones((2, 3)))
    np.testing.assert_array_equal(w.grad, np.ones((2, 3)))


def test_zero_dependency_leaf_gets_zero():
    a = Tensor([1.0, 2.0], requires_grad=True)
    b = Tensor([3.0], requires_grad=True)
    grads = ops.sum(a).backward(inputs=[a, b])
    np.testing.assert_array_equal(grads[b], [0.0])


def test_backward_twice_is_error():
    a = Tensor([1.0, 2.0], requires_grad=True)
    loss = ops.sum(ops.mul(a, a))
    loss.backward()
    with pytest.raises(GradientError):
        loss.backward()


def test_shared_subexpression_accumulates():
    a = Tensor([1.5, -2.0], requires_grad=True)
    h = ops.mul(a, a)
    ops.sum(ops.add(h, h)).backward()
    np.testing.assert_allclose(a.grad, 4 * a.data)


def test_composite_conv_bn_relu():
    rng = make_rng(10)
    conv = Conv2d(2, 3, 3, rng, padding=1)
    conv1 = Conv1d(1, 2, 3, rng, padding=1)
    bn = BatchNorm(3)
    x = param(rng, 3, 2, 4, 4)
    s = param(rng, 3, 1, 6)
    w = probe(rng, (3, 3))
    w1 = probe(rng, (3, 2, 6))

    def fn():
        h = ops.relu(bn(conv(x), training=True))
        return ops.add(ops.weighted_sum(ops.global_avg_pool(h), w), ops.weighted_sum(ops.relu(conv1(s)), w1))

    assert check_gradients(fn, [x, s, conv.weight, conv1.weight, bn.gamma, bn.beta]) < 1e-4


def test_non_finite_is_reported():
    with pytest.raises(NonFiniteError):
        ops.exp(Tensor([1000.0]))
    with pytest.raises(NonFiniteError):
        Tensor([np.nan])


def test_determinism_bit_identical():
    def run():
        rng = make_rng(42)
        conv = Conv2d(2, 3, 3, rng, padding=1)
        x = param(rng, 2, 2, 5, 5)
        loss = ops.sum(ops.relu(conv(x)))
        loss.backward()
        return loss.data.copy(), conv.weight.grad.copy()

    (l1, g1), (l2, g2) = run(), run()
    assert l1.tobytes() == l2.tobytes() and g1.tobytes() == g2.tobytes()


def test_rng_same_seed_same_stream():
    assert make_rng(7).uniform(size=5).tobytes() == make_rng(7).uniform(size=5).tobytes()
    with pytest.raises(ValueError):
        make_rng(-1)


def test_relative_error_metric():
    assert relative_error(np.array([2.0]), np.array([1.0])) == 1.0
    assert relative_error(np.array([0.1]), np.array([0.0])) == pytest.approx(0.1)


def test_numeric_grad_of_square():
    x = Tensor([3.0], requires_grad=True)
    np.testing.assert_allclose(numeric_grad(lambda: ops.sum(ops.mul(x, x)), x), [6.0], rtol=1e-8)
