import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mmbeam import tensor as T
from mmbeam.errors import ContractError, DimensionError, NumericError, ValidationError
from mmbeam.gradcheck import numerical_gradient, relative_error
from mmbeam.optim import Adam, AdamState, adam_step
from mmbeam.tensor import Tensor

GRAD_TOL = 1e-4


def param(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def assert_grad(f, *tensors):
    for t in tensors:
        t.grad = None
    f().backward()
    for t in tensors:
        err = relative_error(t.grad, numerical_gradient(f, t, 1e-5))
        assert err <= GRAD_TOL, err


# --- matmul ----------------------------------------------------------------

def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal((Tensor(np.eye(2)) @ a).data, a.data)


def test_matmul_analytic():
    out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(out.data, [[19, 22], [43, 50]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_matmul_grad_of_sum_is_ones_times_bt():
    rng = np.random.default_rng(0)
    a, b = param(rng, 3, 4), param(rng, 4, 2)
    (a @ b).sum().backward()
    np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.data.T, atol=1e-12)
    fd = numerical_gradient(lambda: (a @ b).sum(), a)
    assert relative_error(a.grad, fd) <= GRAD_TOL


def test_batched_matmul_grads():
    rng = np.random.default_rng(1)
    a, b, w = param(rng, 2, 3, 4), param(rng, 2, 4, 5), param(rng, 5, 3)
    c = Tensor(rng.standard_normal((2, 3, 3)))
    assert_grad(lambda: ((a @ b @ w) * c).sum(), a, b, w)


# --- softmax ---------------------------------------------------------------

def test_softmax_uniform_and_analytic():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(T.softmax(Tensor([0.0, math.log(3)])).data, [0.25, 0.75], atol=1e-15)


def test_softmax_random_sums_to_one_and_jacobian():
    rng = np.random.default_rng(2)
    x = param(rng, 8)
    y = T.softmax(x)
    assert abs(y.data.sum() - 1.0) <= 1e-12
    for j in range(8):  # one Jacobian row per output component
        assert_grad(lambda: T.softmax(x)[j], x)


def test_softmax_rejects_non_finite():
    with pytest.raises(NumericError):
        T.softmax(Tensor([0.0, np.inf]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)))
def test_softmax_property(x):
    y = T.softmax(Tensor(x)).data
    assert abs(y.sum() - 1.0) <= 1e-12
    assert np.all(y > 0) and np.all(y <= 1)


# --- layer norm --------------------------------------------------------------

def test_layer_norm_constant_row_is_zero():
    out = T.layer_norm(Tensor([[5.0, 5.0, 5.0, 5.0]]), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(out.data, np.zeros((1, 4)))


def test_layer_norm_two_point():
    out = T.layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)
    np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-15)


def test_layer_norm_statistics_and_grad():
    rng = np.random.default_rng(3)
    x = param(rng, 3, 7)
    z = T.standardize(x, -1, eps=0.0).data
    assert np.all(np.abs(z.mean(axis=-1)) <= 1e-12)
    assert np.all(np.abs(z.var(axis=-1) - 1.0) <= 1e-6)
    g, b = param(rng, 7), param(rng, 7)
    w = Tensor(rng.standard_normal((3, 7)))
    assert_grad(lambda: (T.layer_norm(x, g, b) * w).sum(), x, g, b)


def test_layer_norm_shape_errors():
    with pytest.raises(DimensionError):
        T.layer_norm(Tensor(np.ones((2, 3))), Tensor(np.ones(2)), Tensor(np.zeros(2)))
    with pytest.raises(DimensionError):
        T.standardize(Tensor(np.ones((2, 0))), -1)


# --- relu / gelu / sigmoid -------------------------------------------------

def test_relu_values_and_subgradient():
    np.testing.assert_array_equal(T.relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])
    np.testing.assert_array_equal(T.relu(Tensor(-np.ones(5))).data, np.zeros(5))
    x = Tensor([-1.0, 2.0], requires_grad=True)
    T.relu(x).sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])
    z = Tensor([0.0], requires_grad=True)
    T.relu(z).sum().backward()
    assert z.grad[0] == 0.0


@pytest.mark.parametrize("fn", [T.relu, T.gelu, T.sigmoid])
def test_activation_grads(fn):
    rng = np.random.default_rng(4)
    x = param(rng, 4, 5)
    w = Tensor(rng.standard_normal((4, 5)))
    assert_grad(lambda: (fn(x) * w).sum(), x)


# --- concat ------------------------------------------------------------------

def test_concat_values():
    np.testing.assert_array_equal(T.concat([Tensor([1.0, 2.0]), Tensor([3.0])]).data, [1, 2, 3])
    x = Tensor(np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal(T.concat([x], axis=1).data, x.data)


def test_concat_split_round_trip_bit_exact():
    rng = np.random.default_rng(5)
    parts = [Tensor(rng.standard_normal((2, n))) for n in (3, 1, 4)]
    back = T.split(T.concat(parts, axis=1), [3, 1, 4], axis=1)
    for a, b in zip(parts, back):
        assert np.array_equal(a.data, b.data)


def test_concat_incompatible():
    with pytest.raises(DimensionError):
        T.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=1)


def test_concat_grad():
    rng = np.random.default_rng(6)
    a, b = param(rng, 2, 3), param(rng, 2, 2)
    w = Tensor(rng.standard_normal((2, 5)))
    assert_grad(lambda: (T.concat([a, b], axis=1) * w).sum(), a, b)


# --- cross entropy -----------------------------------------------------------

def test_cross_entropy_confident_and_uniform():
    assert T.cross_entropy(Tensor([[30.0, 0.0, 0.0]]), [0]).item() == pytest.approx(0, abs=1e-9)
    assert abs(T.cross_entropy(Tensor(np.zeros((1, 64))), [5]).item() - math.log(64)) <= 1e-9


def test_cross_entropy_matches_direct_recomputation():
    rng = np.random.default_rng(7)
    logits = rng.standard_normal((2, 5))
    labels = np.array([3, 1])
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    expected = -0.5 * (math.log(p[0, 3]) + math.log(p[1, 1]))
    assert T.cross_entropy(Tensor(logits), labels).item() == pytest.approx(expected, abs=1e-12)


def test_cross_entropy_grad_and_label_validation():
    rng = np.random.default_rng(8)
    x = param(rng, 3, 6)
    assert_grad(lambda: T.cross_entropy(x, np.array([0, 5, 2])), x)
    with pytest.raises(ValidationError):
        T.cross_entropy(x, np.array([0, 6, 2]))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 6), elements=st.floats(-30, 30)), st.lists(st.integers(0, 5), min_size=3, max_size=3))
def test_cross_entropy_nonnegative(logits, labels):
    assert T.cross_entropy(Tensor(logits), np.array(labels)).item() >= 0


# --- backward ----------------------------------------------------------------

def test_backward_simple_rules():
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones(3))
    x.grad = None
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, 2 * x.data)


def test_backward_accumulates_without_reset():
    x = Tensor([1.0, 2.0], requires_grad=True)
    x.sum().backward()
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_shared_subexpression_visited_once():
    x = Tensor([2.0], requires_grad=True)
    y = x * x
    z = (y + y).sum()  # d/dx 2x^2 = 4x
    order = T.topological_order(z)
    assert len(order) == len({id(n) for n in order})
    z.backward()
    np.testing.assert_array_equal(x.grad, [8.0])


def test_tape_is_topological():
    rng = np.random.default_rng(9)
    a, b = param(rng, 2, 2), param(rng, 2, 2)
    loss = T.relu(a @ b + a).sum()
    order = T.topological_order(loss)
    pos = {id(n): i for i, n in enumerate(order)}
    for node in order:
        for p in node._parents:
            assert pos[id(p)] < pos[id(node)]


def test_backward_deterministic():
    def run():
        rng = np.random.default_rng(10)
        a, b = param(rng, 4, 3), param(rng, 3, 2)
        T.cross_entropy(T.gelu(a @ b), np.array([0, 1, 1, 0])).backward()
        return a.grad.copy(), b.grad.copy()

    (a1, b1), (a2, b2) = run(), run()
    assert np.array_equal(a1, a2) and np.array_equal(b1, b2)


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._parents == ()


# --- conv ------------------------------------------------------------------

def _direct_conv(x, w, b, stride, pad):
    bsz, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho, wo = (h + 2 * pad - kh) // stride + 1, (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((bsz, ho, wo, cout))
    for n in range(bsz):
        for i in range(ho):
            for j in range(wo):
                patch = xp[n, i * stride:i * stride + kh, j * stride:j * stride + kw, :]
                out[n, i, j] = np.tensordot(patch, w, axes=3) + b
    return out


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_matches_direct_loop_and_grads(stride):
    rng = np.random.default_rng(11)
    x, w, b = param(rng, 2, 6, 6, 3), param(rng, 3, 3, 3, 4), param(rng, 4)
    out = T.conv2d(x, w, b, stride=stride, padding=1)
    np.testing.assert_allclose(out.data, _direct_conv(x.data, w.data, b.data, stride, 1), atol=1e-12)
    r = Tensor(rng.standard_normal(out.shape))
    assert_grad(lambda: (T.conv2d(x, w, b, stride=stride, padding=1) * r).sum(), x, w, b)


@pytest.mark.parametrize("stride", [1, 2])
def test_depthwise_conv_matches_direct_loop_and_grads(stride):
    rng = np.random.default_rng(12)
    x, w = param(rng, 2, 6, 6, 3), param(rng, 3, 3, 3)
    out = T.depthwise_conv2d(x, w, stride=stride, padding=1)
    for c in range(3):
        dense = np.zeros((3, 3, 1, 1))
        dense[:, :, 0, 0] = w.data[:, :, c]
        ref = _direct_conv(x.data[..., c:c + 1], dense, np.zeros(1), stride, 1)
        np.testing.assert_allclose(out.data[..., c:c + 1], ref, atol=1e-12)
    r = Tensor(rng.standard_normal(out.shape))
    assert_grad(lambda: (T.depthwise_conv2d(x, w, stride=stride, padding=1) * r).sum(), x, w)


def test_reshape_transpose_getitem_mean_grads():
    rng = np.random.default_rng(13)
    x = param(rng, 2, 3, 4)
    r = Tensor(rng.standard_normal((4, 3)))
    assert_grad(lambda: (T.transpose(x, (2, 1, 0)).reshape(4, 6)[:, 1:4] * r).sum(), x)
    assert_grad(lambda: (x.mean(axis=(0, 2)) * Tensor([1.0, -2.0, 0.5])).sum(), x)


def test_broadcast_mul_grad():
    rng = np.random.default_rng(14)
    x, g = param(rng, 2, 3, 3, 4), param(rng, 2, 1, 1, 4)
    r = Tensor(rng.standard_normal((2, 3, 3, 4)))
    assert_grad(lambda: (x * g * r).sum(), x, g)


# --- Adam ------------------------------------------------------------------

def test_adam_first_step_is_lr_times_sign():
    p = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    g = np.array([0.5, -3.0, 1e-3])
    before = p.data.copy()
    state = AdamState(lr=1e-3)
    adam_step([p], [g], state)
    # m̂ = g, v̂ = g², so the step is lr * g / (|g| + eps)
    np.testing.assert_allclose(p.data - before, -1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-12)
    np.testing.assert_allclose(p.data - before, -1e-3 * np.sign(g), rtol=1e-4)
    assert state.t == 1


def test_adam_noop_cases():
    p = Tensor([1.0, 2.0], requires_grad=True)
    adam_step([p], [np.zeros(2)], AdamState(lr=1e-3))
    np.testing.assert_array_equal(p.data, [1.0, 2.0])
    adam_step([p], [np.array([5.0, -1.0])], AdamState(lr=0.0, weight_decay=1e-4))
    np.testing.assert_array_equal(p.data, [1.0, 2.0])


def test_adam_weight_decay_is_added_to_gradient():
    p = Tensor([2.0], requires_grad=True)
    q = Tensor([2.0], requires_grad=True)
    adam_step([p], [np.array([0.0])], AdamState(lr=0.1, weight_decay=0.5))
    adam_step([q], [np.array([1.0])], AdamState(lr=0.1))  # 0 + 0.5 * 2 = 1
    assert p.data[0] == q.data[0]


def test_adam_shape_mismatch():
    p = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(DimensionError):
        adam_step([p], [np.zeros(3)], AdamState())


def test_adam_class_minimizes_quadratic():
    x = Tensor([3.0, -4.0], requires_grad=True)
    opt = Adam([x], lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        (x * x).sum().backward()
        opt.step()
    assert np.all(np.abs(x.data) < 1e-2)
