"""
Dense tensors and the gradient tape.

A Tensor wraps a row-major numpy array of float32 ("f32") or float64 ("f64").
Primitive operations are Function subclasses; while a Tape is active, every
primitive applied to at least one grad-enabled input is appended to it, and
`backward` walks the tape in reverse to produce gradients for the leaves.
"""
from __future__ import annotations

import numpy as np

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from kanformer.errors import ContractError

PRECISIONS = {"f32": np.float32, "f64": np.float64}


def resolve_dtype(precision: str):
    try:
        return PRECISIONS[precision]
    except KeyError:
        raise ContractError(
            f"unknown precision '{precision}', expected one of {list(PRECISIONS)}"
        ) from None


def precision_of(dtype) -> str:
    return "f64" if np.dtype(dtype) == np.float64 else "f32"


class Tensor:
    """Dense n-dimensional array with optional tape participation."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        precision: Optional[str] = None,
        name: Optional[str] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if precision is None:
            precision = precision_of(arr.dtype) if arr.dtype.kind == "f" else "f32"
        dtype = resolve_dtype(precision)
        self.data: np.ndarray = np.ascontiguousarray(arr, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def precision(self) -> str:
        return precision_of(self.data.dtype)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, precision=self.precision)

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, precision={self.precision}{req}{nm})"

    # operator sugar, resolved lazily to avoid a circular import with ops
    def __add__(self, other):
        from kanformer.tensor import ops

        return ops.add(self, other)

    def __radd__(self, other):
        from kanformer.tensor import ops

        return ops.add(other, self)

    def __sub__(self, other):
        from kanformer.tensor import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from kanformer.tensor import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from kanformer.tensor import ops

        return ops.mul(self, other)

    def __rmul__(self, other):
        from kanformer.tensor import ops

        return ops.mul(other, self)

    def __truediv__(self, other):
        from kanformer.tensor import ops

        return ops.div(self, other)

    def __neg__(self):
        from kanformer.tensor import ops

        return ops.negate(self)

    def __matmul__(self, other):
        from kanformer.tensor import ops

        return ops.matmul(self, other)

    def reshape(self, *shape):
        from kanformer.tensor import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from kanformer.tensor import ops

        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False):
        from kanformer.tensor import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from kanformer.tensor import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data: Any, precision: Optional[str] = None, name=None):
        super().__init__(data, requires_grad=True, precision=precision, name=name)


def offset_of(shape: Sequence[int], index: Sequence[int]) -> int:
    """Row-major offset of a multi-index."""
    if len(shape) != len(index):
        raise ContractError(f"index {tuple(index)} does not match shape {tuple(shape)}")
    offset, stride = 0, 1
    for dim, i in zip(reversed(shape), reversed(index)):
        if not 0 <= i < dim:
            raise ContractError(f"index {tuple(index)} out of bounds for {tuple(shape)}")
        offset += i * stride
        stride *= dim
    return offset


def index_of(shape: Sequence[int], offset: int) -> Tuple[int, ...]:
    total = int(np.prod(shape, dtype=np.int64))
    if not 0 <= offset < total:
        raise ContractError(f"offset {offset} out of bounds for {tuple(shape)}")
    index = []
    for dim in reversed(shape):
        index.append(offset % dim)
        offset //= dim
    return tuple(reversed(index))


@dataclass
class Node:
    op: str
    inputs: Tuple[Any, ...]
    output: Tensor
    ctx: "Context"
    backward_fn: Callable


@dataclass
class Context:
    saved: Tuple[Any, ...] = ()
    kwargs: Dict[str, Any] = field(default_factory=dict)

    def save_for_backward(self, *values):
        self.saved = values


class Tape:
    """Ordered record of primitive applications.

    Usage:
        with Tape() as tape:
            loss = model(x)
        grads = backward(loss, tape)
    """

    _active: List["Tape"] = []

    def __init__(self):
        self.nodes: List[Node] = []

    def __enter__(self) -> "Tape":
        Tape._active.append(self)
        return self

    def __exit__(self, *exc):
        Tape._active.pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def current(cls) -> Optional["Tape"]:
        return cls._active[-1] if cls._active else None

    def record(self, node: Node):
        self.nodes.append(node)


class Function:
    """Base class of differentiable primitives.

    Subclasses implement `forward(ctx, *arrays, **kwargs) -> ndarray` and
    `backward(ctx, grad) -> tuple` with one entry (or None) per input.
    Non-tensor positional inputs (python scalars) are lifted to constant
    tensors of the graph precision.
    """

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        precision = None
        for inp in inputs:
            if isinstance(inp, Tensor):
                if precision is None:
                    precision = inp.precision
                elif inp.precision != precision:
                    raise ContractError(
                        f"{cls.__name__.lower()}: mixed precisions {precision} and {inp.precision}"
                    )
        precision = precision or "f32"
        tensors = tuple(
            inp if isinstance(inp, Tensor) else Tensor(inp, precision=precision)
            for inp in inputs
        )
        ctx = Context(kwargs=kwargs)
        out = Tensor(cls.forward(ctx, *[t.data for t in tensors], **kwargs), precision=precision)
        tape = Tape.current()
        if tape is not None and any(t.requires_grad for t in tensors):
            out.requires_grad = True
            tape.record(Node(cls.__name__, tensors, out, ctx, cls.backward))
        return out

    @staticmethod
    def forward(ctx: Context, *args, **kwargs) -> np.ndarray:
        raise NotImplementedError

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError


def backward(output: Tensor, tape: Tape) -> Dict[Tensor, Tensor]:
    """Reverse pass over `tape` seeded with d(output)/d(output) = 1.

    Returns a map from every grad-enabled leaf on the tape to its gradient.
    Accumulation happens in fixed tape order, so replaying the same tape
    gives bit-identical results.
    """
    if output.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    produced = {id(node.output) for node in tape.nodes}
    if id(output) not in produced:
        raise ContractError("output was not recorded on this tape")

    grads: Dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    leaves: Dict[int, Tensor] = {}
    for node in tape.nodes:
        for inp in node.inputs:
            if inp.requires_grad and id(inp) not in produced and id(inp) not in leaves:
                leaves[id(inp)] = inp

    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        input_grads = node.backward_fn(node.ctx, g)
        if not isinstance(input_grads, tuple):
            input_grads = (input_grads,)
        for inp, ig in zip(node.inputs, input_grads):
            if ig is None or not inp.requires_grad:
                continue
            if ig.shape != inp.shape:
                raise ContractError(
                    f"{node.op}: gradient shape {ig.shape} does not match input {inp.shape}"
                )
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig.astype(inp.data.dtype, copy=True)

    return {
        leaf: Tensor(grads.get(key, np.zeros_like(leaf.data)), precision=leaf.precision)
        for key, leaf in leaves.items()
    }
