"""
Differentiable primitives.

Broadcasting follows trailing-axis alignment with size-1 expansion only;
gradients of broadcast operands are summed back to the operand shape.
"""
from __future__ import annotations

import numpy as np

from typing import Iterable, Optional, Sequence, Tuple, Union

from kanformer.errors import ContractError, ShapeError
from kanformer.tensor.tensor import Function, Tensor

Axes = Union[int, Sequence[int], None]


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndims_added = grad.ndim - len(shape)
    if ndims_added > 0:
        grad = grad.sum(axis=tuple(range(ndims_added)))
    keep = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad


def _broadcast_check(name: str, a: np.ndarray, b: np.ndarray):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} are not broadcastable") from None


def _normalize_axes(axes: Axes, ndim: int) -> Tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ContractError(f"axis {ax} is out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise ContractError(f"repeated axis in {tuple(axes)}")
    return tuple(sorted(out))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x)).astype(x.dtype, copy=False)


class Add(Function):
    @staticmethod
    def forward(ctx, a, b):
        _broadcast_check("add", a, b)
        ctx.save_for_backward(a.shape, b.shape)
        return a + b

    @staticmethod
    def backward(ctx, grad):
        sa, sb = ctx.saved
        return unbroadcast(grad, sa), unbroadcast(grad, sb)


class Sub(Function):
    @staticmethod
    def forward(ctx, a, b):
        _broadcast_check("sub", a, b)
        ctx.save_for_backward(a.shape, b.shape)
        return a - b

    @staticmethod
    def backward(ctx, grad):
        sa, sb = ctx.saved
        return unbroadcast(grad, sa), unbroadcast(-grad, sb)


class Mul(Function):
    @staticmethod
    def forward(ctx, a, b):
        _broadcast_check("mul", a, b)
        ctx.save_for_backward(a, b)
        return a * b

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx.saved
        return unbroadcast(grad * b, a.shape), unbroadcast(grad * a, b.shape)


class Div(Function):
    @staticmethod
    def forward(ctx, a, b):
        _broadcast_check("div", a, b)
        ctx.save_for_backward(a, b)
        return a / b

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx.saved
        return (
            unbroadcast(grad / b, a.shape),
            unbroadcast(-grad * a / (b * b), b.shape),
        )


class Negate(Function):
    @staticmethod
    def forward(ctx, x):
        return -x

    @staticmethod
    def backward(ctx, grad):
        return (-grad,)


class Square(Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return x * x

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.saved
        return (2.0 * x * grad,)


class Tanh(Function):
    @staticmethod
    def forward(ctx, x):
        y = np.tanh(x)
        ctx.save_for_backward(y)
        return y

    @staticmethod
    def backward(ctx, grad):
        (y,) = ctx.saved
        return (grad * (1.0 - y * y),)


class Silu(Function):
    @staticmethod
    def forward(ctx, x):
        s = _sigmoid(x)
        ctx.save_for_backward(x, s)
        return x * s

    @staticmethod
    def backward(ctx, grad):
        x, s = ctx.saved
        return (grad * (s * (1.0 + x * (1.0 - s))),)


class Exp(Function):
    @staticmethod
    def forward(ctx, x):
        y = np.exp(x)
        ctx.save_for_backward(y)
        return y

    @staticmethod
    def backward(ctx, grad):
        (y,) = ctx.saved
        return (grad * y,)


class Sum(Function):
    @staticmethod
    def forward(ctx, x, axis=None, keepdims=False):
        axes = _normalize_axes(axis, x.ndim)
        ctx.save_for_backward(x.shape, axes, keepdims)
        return np.sum(x, axis=axes, keepdims=keepdims)

    @staticmethod
    def backward(ctx, grad):
        shape, axes, keepdims = ctx.saved
        if not keepdims:
            grad = np.expand_dims(grad, axes)
        return (np.broadcast_to(grad, shape).copy(),)


class Mean(Function):
    @staticmethod
    def forward(ctx, x, axis=None, keepdims=False):
        axes = _normalize_axes(axis, x.ndim)
        count = int(np.prod([x.shape[a] for a in axes], dtype=np.int64))
        ctx.save_for_backward(x.shape, axes, keepdims, count)
        return np.mean(x, axis=axes, keepdims=keepdims)

    @staticmethod
    def backward(ctx, grad):
        shape, axes, keepdims, count = ctx.saved
        if not keepdims:
            grad = np.expand_dims(grad, axes)
        return (np.broadcast_to(grad / count, shape).copy(),)


class MatMul(Function):
    @staticmethod
    def forward(ctx, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ShapeError(
                f"matmul: batch dimensions of {a.shape} and {b.shape} are not broadcastable"
            ) from None
        ctx.save_for_backward(a, b)
        return np.matmul(a, b)

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx.saved
        ga = np.matmul(grad, np.swapaxes(b, -1, -2))
        gb = np.matmul(np.swapaxes(a, -1, -2), grad)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


class Reshape(Function):
    @staticmethod
    def forward(ctx, x, shape=()):
        ctx.save_for_backward(x.shape)
        try:
            return x.reshape(shape)
        except ValueError:
            raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None

    @staticmethod
    def backward(ctx, grad):
        (shape,) = ctx.saved
        return (grad.reshape(shape),)


class Transpose(Function):
    @staticmethod
    def forward(ctx, x, axes=None):
        axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
        ctx.save_for_backward(axes)
        return np.ascontiguousarray(np.transpose(x, axes))

    @staticmethod
    def backward(ctx, grad):
        (axes,) = ctx.saved
        return (np.transpose(grad, np.argsort(axes)),)


class Softmax(Function):
    @staticmethod
    def forward(ctx, x, axes=(-1,)):
        axes = _normalize_axes(axes, x.ndim)
        shifted = x - np.max(x, axis=axes, keepdims=True)
        e = np.exp(shifted)
        s = e / np.sum(e, axis=axes, keepdims=True)
        ctx.save_for_backward(s, axes)
        return s

    @staticmethod
    def backward(ctx, grad):
        s, axes = ctx.saved
        return (s * (grad - np.sum(grad * s, axis=axes, keepdims=True)),)


class LogSoftmax(Function):
    @staticmethod
    def forward(ctx, x, axis=-1):
        shifted = x - np.max(x, axis=axis, keepdims=True)
        out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
        ctx.save_for_backward(out, axis)
        return out

    @staticmethod
    def backward(ctx, grad):
        out, axis = ctx.saved
        return (grad - np.exp(out) * np.sum(grad, axis=axis, keepdims=True),)


class LayerNorm(Function):
    @staticmethod
    def forward(ctx, x, gain, bias, eps=1e-5):
        if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
            raise ShapeError(
                f"layer_norm: input {x.shape} does not match gain {gain.shape} / bias {bias.shape}"
            )
        mu = x.mean(axis=-1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv_std
        ctx.save_for_backward(xhat, inv_std, gain)
        return xhat * gain + bias

    @staticmethod
    def backward(ctx, grad):
        xhat, inv_std, gain = ctx.saved
        gxhat = grad * gain
        gx = inv_std * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(grad.ndim - 1))
        return gx, (grad * xhat).sum(axis=lead), grad.sum(axis=lead)


class Take(Function):
    @staticmethod
    def forward(ctx, x, indices=None, axis=0):
        indices = np.asarray(indices, dtype=np.int64)
        ctx.save_for_backward(x.shape, indices, axis)
        return np.take(x, indices, axis=axis)

    @staticmethod
    def backward(ctx, grad):
        shape, indices, axis = ctx.saved
        gx = np.zeros(shape, dtype=grad.dtype)
        np.add.at(np.moveaxis(gx, axis, 0), indices, np.moveaxis(grad, axis, 0))
        return (gx,)


class ScatterAddRows(Function):
    @staticmethod
    def forward(ctx, src, indices=None, num_rows=0):
        indices = np.asarray(indices, dtype=np.int64)
        out = np.zeros((num_rows,) + src.shape[1:], dtype=src.dtype)
        np.add.at(out, indices, src)
        ctx.save_for_backward(indices)
        return out

    @staticmethod
    def backward(ctx, grad):
        (indices,) = ctx.saved
        return (grad[indices],)


class Concat(Function):
    @staticmethod
    def forward(ctx, *xs, axis=0):
        ctx.save_for_backward([x.shape[axis] for x in xs], axis)
        return np.concatenate(xs, axis=axis)

    @staticmethod
    def backward(ctx, grad):
        sizes, axis = ctx.saved
        return tuple(np.split(grad, np.cumsum(sizes)[:-1], axis=axis))


def add(a, b) -> Tensor:
    return Add.apply(a, b)


def sub(a, b) -> Tensor:
    return Sub.apply(a, b)


def mul(a, b) -> Tensor:
    return Mul.apply(a, b)


def div(a, b) -> Tensor:
    return Div.apply(a, b)


def negate(x) -> Tensor:
    return Negate.apply(x)


def square(x) -> Tensor:
    return Square.apply(x)


def tanh(x) -> Tensor:
    return Tanh.apply(x)


def silu(x) -> Tensor:
    return Silu.apply(x)


def exp(x) -> Tensor:
    return Exp.apply(x)


def sum(x, axis: Axes = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x, axis: Axes = None, keepdims: bool = False) -> Tensor:
    return Mean.apply(x, axis=axis, keepdims=keepdims)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    return Transpose.apply(x, axes=None if axes is None else tuple(axes))


def softmax_axis(x: Tensor, axes: Iterable[int]) -> Tensor:
    """Softmax normalized jointly over `axes`, stabilized by max-subtraction."""
    axes = tuple(axes) if not isinstance(axes, int) else (axes,)
    if not axes:
        raise ContractError("softmax_axis needs at least one axis")
    return Softmax.apply(x, axes=_normalize_axes(axes, x.ndim))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    return LogSoftmax.apply(x, axis=axis)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ContractError(f"layer_norm needs eps > 0, got {eps}")
    return LayerNorm.apply(x, gain, bias, eps=eps)


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    return Take.apply(x, indices=indices, axis=axis % x.ndim)


def scatter_add_rows(src: Tensor, indices, num_rows: int) -> Tensor:
    return ScatterAddRows.apply(src, indices=indices, num_rows=num_rows)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*xs, axis=axis)


_ACTIVATIONS = {
    "silu": (silu, 1),
    "tanh": (tanh, 1),
    "exp": (exp, 1),
    "square": (square, 1),
    "negate": (negate, 1),
    "add": (add, 2),
    "mul": (mul, 2),
    "sum": (sum, 1),
    "mean": (mean, 1),
}


def activation(kind: str, *operands, **kwargs) -> Tensor:
    """Dispatch an elementwise or reduction primitive by name."""
    if kind not in _ACTIVATIONS:
        raise ContractError(f"unknown activation kind '{kind}', expected one of {list(_ACTIVATIONS)}")
    fn, arity = _ACTIVATIONS[kind]
    if len(operands) != arity:
        raise ContractError(f"'{kind}' takes {arity} operand(s), got {len(operands)}")
    return fn(*operands, **kwargs)
