import pytest
import numpy as np

import kanformer.tensor as T
from kanformer.errors import ContractError, ShapeError
from kanformer.tensor import Parameter, Tape, Tensor, backward, finite_diff_gradcheck
from kanformer.tensor.gradcheck import relative_error


def test_offset_and_index_are_inverse():
    shape = (2, 3, 4)
    assert T.offset_of(shape, (1, 2, 3)) == 23
    for offset in range(24):
        assert T.offset_of(shape, T.index_of(shape, offset)) == offset


def test_offset_out_of_bounds():
    with pytest.raises(ContractError):
        T.offset_of((2, 3), (2, 0))
    with pytest.raises(ContractError):
        T.index_of((2, 3), 6)


def test_precision_resolution():
    assert Tensor([1.0, 2.0]).precision == "f64"
    assert Tensor([1, 2]).precision == "f32"
    assert Tensor(np.ones(3), precision="f32").data.dtype == np.float32


def test_broadcast_gradient_is_summed_back():
    a = Parameter(np.ones((2, 3)), precision="f64")
    b = Parameter(np.arange(3.0), precision="f64")
    with Tape() as tape:
        loss = T.ops.sum(a + b)
    grads = backward(loss, tape)
    np.testing.assert_array_equal(grads[b].data, [2.0, 2.0, 2.0])
    np.testing.assert_array_equal(grads[a].data, np.ones((2, 3)))


def test_shared_input_accumulates():
    x = Parameter(np.array([3.0]), precision="f64")
    with Tape() as tape:
        loss = T.ops.sum(x * x + x)
    grads = backward(loss, tape)
    assert grads[x].item() == pytest.approx(7.0)


def test_no_tape_records_nothing():
    x = Parameter(np.ones(3))
    y = T.tanh(x)
    assert not y.requires_grad
    with Tape() as tape:
        T.tanh(Tensor(np.ones(3)))
    assert len(tape) == 0


def test_backward_needs_scalar_on_tape():
    x = Parameter(np.ones(3))
    with Tape() as tape:
        y = T.tanh(x)
    with pytest.raises(ContractError):
        backward(y, tape)
    with pytest.raises(ContractError):
        backward(T.ops.sum(Tensor(np.ones(2))), tape)


def test_backward_replay_is_bit_identical(rng):
    x = Parameter(rng.normal(size=(4, 5)))
    w = Tensor(rng.normal(size=(5, 3)))
    with Tape() as tape:
        loss = T.ops.mean(T.silu(T.matmul(x, w)))
    first = backward(loss, tape)[x].data
    second = backward(loss, tape)[x].data
    assert np.array_equal(first, second)


def test_mixed_precision_is_rejected():
    with pytest.raises(ContractError):
        T.add(Tensor(np.ones(2), precision="f32"), Tensor(np.ones(2), precision="f64"))


def test_shape_errors():
    with pytest.raises(ShapeError):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    with pytest.raises(ShapeError):
        T.reshape(Tensor(np.ones(6)), (4, 2))


def test_softmax_axis_normalizes_jointly(rng):
    x = Tensor(rng.normal(size=(2, 3, 4, 5)), precision="f64")
    s = T.softmax_axis(x, (2, 3))
    np.testing.assert_allclose(s.data.sum(axis=(2, 3)), 1.0, atol=1e-12)
    with pytest.raises(ContractError):
        T.softmax_axis(x, ())


def test_softmax_is_stable_for_large_logits():
    x = Tensor(np.array([[1000.0, 1000.0]]), precision="f64")
    np.testing.assert_allclose(T.softmax_axis(x, (1,)).data, [[0.5, 0.5]])


def test_take_and_scatter_add_rows():
    x = Tensor(np.arange(6.0).reshape(3, 2), precision="f64")
    np.testing.assert_array_equal(T.take(x, [2, 0], axis=0).data, [[4.0, 5.0], [0.0, 1.0]])
    out = T.scatter_add_rows(x, [1, 1, 0], 3)
    np.testing.assert_array_equal(out.data, [[4.0, 5.0], [2.0, 4.0], [0.0, 0.0]])


def test_activation_dispatch():
    x = Tensor(np.array([0.0, 1.0]), precision="f64")
    np.testing.assert_allclose(T.activation("silu", x).data, [0.0, 1.0 / (1.0 + np.exp(-1.0))])
    with pytest.raises(ContractError):
        T.activation("relu", x)
    with pytest.raises(ContractError):
        T.activation("add", x)


@pytest.mark.parametrize(
    "fn",
    [
        T.tanh,
        T.silu,
        T.exp,
        T.square,
        lambda t: T.log_softmax(t, axis=-1),
        lambda t: T.softmax_axis(t, (0, 1)),
        lambda t: T.transpose(t, (1, 0)),
    ],
)
def test_gradcheck_primitives(fn, rng):
    x = Tensor(rng.uniform(-1.5, 1.5, size=(3, 4)), precision="f64")
    w = Tensor(rng.normal(size=fn(x).shape), precision="f64")
    report = finite_diff_gradcheck(lambda t: T.ops.sum(fn(t) * w), x)
    assert report.passed, report


def test_gradcheck_needs_f64():
    with pytest.raises(ContractError):
        finite_diff_gradcheck(T.ops.sum, Tensor(np.ones(3), precision="f32"))


def test_gradcheck_detects_a_wrong_gradient():
    class Wrong(T.Function):
        @staticmethod
        def forward(ctx, x):
            return x * x

        @staticmethod
        def backward(ctx, grad):
            return (grad,)

    report = finite_diff_gradcheck(lambda t: T.ops.sum(Wrong.apply(t)), Tensor(np.array([2.0, 3.0])))
    assert not report.passed


def test_relative_error_exact_within_atol():
    assert relative_error(0.0, 1e-12, atol=1e-9) == 0.0
    assert relative_error(1.0, 1.1) == pytest.approx(0.1 / 1.1)


def test_matmul_by_hand():
    a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(T.matmul(a, Tensor(np.ones((2, 1)))).data, [[3.0], [7.0]])
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), Tensor(np.array([[5.0], [7.0]]))).data, [[5.0], [7.0]])


def test_closed_form_values():
    s = T.softmax_axis(Tensor(np.array([0.0, np.log(2.0)])), (0,))
    np.testing.assert_allclose(s.data, [1 / 3, 2 / 3])
    ln = T.layer_norm(Tensor(np.array([1.0, 3.0])), Tensor(np.ones(2)), Tensor(np.zeros(2)), 1e-5)
    np.testing.assert_allclose(ln.data, [-0.999995, 0.999995], atol=1e-7)
    assert T.silu(Tensor(np.array(10.0))).item() == pytest.approx(9.999546, abs=1e-6)


def test_layer_norm_is_shift_invariant(rng):
    x = rng.normal(size=(3, 6))
    gain, bias = Tensor(rng.normal(size=6)), Tensor(rng.normal(size=6))
    a = T.layer_norm(Tensor(x), gain, bias).data
    b = T.layer_norm(Tensor(x + 4.0), gain, bias).data
    np.testing.assert_allclose(a, b, atol=1e-9)
    with pytest.raises(ShapeError):
        T.layer_norm(Tensor(x), Tensor(np.ones(5)), Tensor(np.zeros(5)))
