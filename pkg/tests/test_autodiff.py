"""Gradient checks: every primitive against central finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import lmft.autodiff as ad
from lmft.autodiff import Tensor
from lmft.errors import ShapeError, UsageError

REL_TOL = 1e-4


def _rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def check_gradients(build, leaves, eps=1e-6):
    """Compare backward() gradients of a scalar loss with central differences.

    ``build`` recomputes the loss from the current leaf data; leaves must
    be float64 for the tolerance to be meaningful.
    """
    for leaf in leaves:
        leaf.zero_grad()
    loss = build()
    ad.backward(loss)
    for leaf in leaves:
        flat = leaf.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = build().item()
            flat[k] = orig - eps
            down = build().item()
            flat[k] = orig
            numeric = (up - down) / (2 * eps)
            analytic = leaf.grad.reshape(-1)[k]
            denom = max(abs(numeric), abs(analytic), 1e-8)
            assert abs(analytic - numeric) / denom < REL_TOL, (
                f"grad mismatch at {k}: analytic {analytic}, numeric {numeric}")


def test_add_broadcast_gradient():
    rng = np.random.default_rng(0)
    a = _rand(rng, 3, 4)
    b = _rand(rng, 4)
    check_gradients(lambda: ad.tensor_sum(ad.mul(ad.add(a, b), ad.add(a, b))),
                    [a, b])


def test_sub_mul_gradient():
    rng = np.random.default_rng(1)
    a = _rand(rng, 2, 3)
    b = _rand(rng, 2, 3)
    check_gradients(lambda: ad.tensor_sum(ad.mul(ad.sub(a, b), a)), [a, b])


def test_matmul_gradient_2d():
    rng = np.random.default_rng(2)
    a = _rand(rng, 3, 4)
    b = _rand(rng, 4, 2)
    check_gradients(lambda: ad.tensor_sum(ad.matmul(a, b)), [a, b])


def test_matmul_gradient_batched():
    rng = np.random.default_rng(3)
    a = _rand(rng, 5, 2, 3)
    b = _rand(rng, 3, 4)
    check_gradients(
        lambda: ad.tensor_sum(ad.mul(ad.matmul(a, b), ad.matmul(a, b))),
        [a, b])


def test_transpose_gradient():
    rng = np.random.default_rng(4)
    a = _rand(rng, 3, 5)
    b = _rand(rng, 3, 5)
    check_gradients(lambda: ad.tensor_sum(ad.matmul(ad.transpose(a), b)),
                    [a, b])


@pytest.mark.parametrize("op", [ad.sigmoid, ad.tanh])
def test_pointwise_gradient(op):
    rng = np.random.default_rng(5)
    a = _rand(rng, 4, 3)
    check_gradients(lambda: ad.tensor_sum(ad.mul(op(a), op(a))), [a])


def test_relu_gradient_away_from_kink():
    rng = np.random.default_rng(6)
    a = Tensor(rng.standard_normal((4, 4)) + np.sign(
        rng.standard_normal((4, 4))) * 0.5, requires_grad=True)
    a.data[np.abs(a.data) < 0.1] = 0.3
    check_gradients(lambda: ad.tensor_sum(ad.mul(ad.relu(a), a)), [a])


def test_concat_stack_gradient():
    rng = np.random.default_rng(7)
    a = _rand(rng, 2, 3)
    b = _rand(rng, 2, 5)
    c = _rand(rng, 2, 3)

    def build():
        cat = ad.concat([a, b], axis=1)
        stk = ad.stack([a, c], axis=0)
        return ad.add(ad.tensor_sum(ad.mul(cat, cat)), ad.tensor_sum(stk))

    check_gradients(build, [a, b, c])


def test_slice_index_gradient():
    rng = np.random.default_rng(8)
    a = _rand(rng, 4, 6)

    def build():
        s = ad.slice_axis(a, 1, 1, 4)
        r = ad.index_axis(a, 0, 2)
        return ad.add(ad.tensor_sum(ad.mul(s, s)), ad.tensor_sum(ad.mul(r, r)))

    check_gradients(build, [a])


def test_embedding_lookup_gradient_with_repeats():
    rng = np.random.default_rng(9)
    table = _rand(rng, 5, 3)
    ids = np.array([[0, 2], [2, 4]])  # repeated row must accumulate
    check_gradients(
        lambda: ad.tensor_sum(ad.mul(ad.embedding_lookup(table, ids),
                                     ad.embedding_lookup(table, ids))),
        [table])


def test_softmax_log_softmax_gradient():
    rng = np.random.default_rng(10)
    a = _rand(rng, 3, 4)
    w = Tensor(rng.standard_normal((3, 4)))
    check_gradients(lambda: ad.tensor_sum(ad.mul(ad.softmax(a), w)), [a])
    check_gradients(lambda: ad.tensor_sum(ad.mul(ad.log_softmax(a), w)), [a])


def test_cross_entropy_gradient():
    rng = np.random.default_rng(11)
    logits = _rand(rng, 4, 2, 5)
    targets = rng.integers(0, 5, size=(4, 2))
    check_gradients(lambda: ad.cross_entropy(logits, targets), [logits])


def test_bce_with_logits_gradient():
    rng = np.random.default_rng(12)
    logits = _rand(rng, 3, 4)
    targets = rng.integers(0, 2, size=(3, 4)).astype(np.float64)
    check_gradients(
        lambda: ad.binary_cross_entropy_with_logits(logits, targets), [logits])


def test_pooling_gradients():
    rng = np.random.default_rng(13)
    x = _rand(rng, 5, 3, 4)
    # well-separated values so the argmax never flips under +-eps
    x.data[:] = np.round(x.data * 10) + np.linspace(0, 0.4, x.size).reshape(x.shape)
    mask = np.ones((5, 3), dtype=bool)
    mask[3:, 0] = False
    mask[4:, 1] = False
    lengths = np.array([3, 4, 5])

    def build():
        parts = [ad.max_over_time(x, mask), ad.mean_over_time(x, mask),
                 ad.last_over_time(x, lengths)]
        cat = ad.concat(parts, axis=1)
        return ad.tensor_sum(ad.mul(cat, cat))

    check_gradients(build, [x])


def test_dropout_apply_gradient_and_scaling():
    rng = np.random.default_rng(14)
    x = _rand(rng, 4, 3)
    mask = rng.random((4, 3)) >= 0.5
    keep = 0.5
    check_gradients(
        lambda: ad.tensor_sum(ad.mul(ad.dropout_apply(x, mask, keep), x)), [x])
    out = ad.dropout_apply(x, mask, keep)
    assert np.allclose(out.data, x.data * mask / keep)


def test_dropout_apply_rejects_bad_keep_prob():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(UsageError):
        ad.dropout_apply(x, np.ones(3), 0.0)
    with pytest.raises(UsageError):
        ad.dropout_apply(x, np.ones(3), 1.5)


# --- structural behavior -------------------------------------------------


def test_non_float_data_becomes_float32():
    t = Tensor(np.array([1, 2, 3]))
    assert t.dtype == np.float32


def test_leaf_gets_eager_zero_grad_buffer():
    t = Tensor(np.ones(3), requires_grad=True)
    assert t.grad is not None and not t.grad.any()
    assert Tensor(np.ones(3)).grad is None


def test_requires_grad_propagation_and_no_grad():
    a = Tensor(np.ones(3), requires_grad=True)
    b = Tensor(np.ones(3))
    assert ad.add(a, b).requires_grad
    assert not ad.add(b, b).requires_grad
    with ad.no_grad():
        out = ad.add(a, b)
    assert not out.requires_grad and out._parents == ()


def test_repeated_backward_adds_one_unit_each_time():
    a = Tensor(np.array([2.0, 3.0]), requires_grad=True)
    loss = ad.tensor_sum(ad.mul(a, a))
    ad.backward(loss)
    first = a.grad.copy()
    ad.backward(loss)
    assert np.array_equal(a.grad, 2 * first)


def test_backward_clears_interior_grads():
    a = Tensor(np.ones(3), requires_grad=True)
    mid = ad.mul(a, a)
    loss = ad.tensor_sum(mid)
    ad.backward(loss)
    assert mid.grad is None and loss.grad is None
    assert a.grad is not None


def test_suffix_broadcast_rejects_prefix_shapes():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    with pytest.raises(ShapeError):
        ad.add(a, Tensor(np.ones((3, 1))))
    with pytest.raises(ShapeError):
        ad.mul(a, Tensor(np.ones(3)))


def test_embedding_lookup_range_check():
    table = Tensor(np.ones((4, 2)), requires_grad=True)
    with pytest.raises(UsageError):
        ad.embedding_lookup(table, np.array([[0, 4]]))
    with pytest.raises(UsageError):
        ad.embedding_lookup(table, np.array([-1]))


def test_cross_entropy_validates_targets():
    logits = Tensor(np.zeros((2, 3)), requires_grad=True)
    with pytest.raises(ShapeError):
        ad.cross_entropy(logits, np.zeros((3,), dtype=int))
    with pytest.raises(UsageError):
        ad.cross_entropy(logits, np.array([0, 3]))


def test_cross_entropy_uniform_value():
    # uniform logits: loss is exactly log(V) up to float error
    logits = Tensor(np.zeros((4, 7)), requires_grad=True)
    loss = ad.cross_entropy(logits, np.arange(4) % 7)
    assert abs(loss.item() - np.log(7)) < 1e-6


def test_has_fault():
    assert not ad.has_fault(Tensor(np.ones(3)))
    assert ad.has_fault(Tensor(np.array([1.0, np.nan])))
    assert ad.has_fault(Tensor(np.array([np.inf])))


def test_zero_grad_helper():
    a = Tensor(np.ones(3), requires_grad=True)
    ad.backward(ad.tensor_sum(a))
    assert a.grad.any()
    ad.zero_grad([a])
    assert not a.grad.any()


@settings(max_examples=25, deadline=None)
@given(lead=st.integers(0, 2), suffix_rank=st.integers(1, 2),
       data=st.data())
def test_broadcast_grad_shapes_match_leaves(lead, suffix_rank, data):
    dims = data.draw(st.lists(st.integers(1, 3), min_size=lead + suffix_rank,
                              max_size=lead + suffix_rank))
    big = Tensor(np.random.default_rng(0).standard_normal(dims),
                 requires_grad=True)
    small = Tensor(np.random.default_rng(1).standard_normal(dims[lead:]),
                   requires_grad=True)
    loss = ad.tensor_sum(ad.mul(ad.add(big, small), ad.add(big, small)))
    ad.backward(loss)
    assert big.grad.shape == big.data.shape
    assert small.grad.shape == small.data.shape
