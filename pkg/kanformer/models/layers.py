import numpy as np

from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import kanformer.tensor as T
from kanformer.errors import ConfigError, ContractError, ShapeError
from kanformer.tensor import Parameter, Tensor


def uniform_(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Container of parameters and sub-modules, discovered by attribute order."""

    training: bool = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield f"{prefix}{name}", value
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state_dict: Dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        missing = [k for k in params if k not in state_dict]
        unexpected = [k for k in state_dict if k not in params]
        if missing or unexpected:
            raise ContractError(f"state dict mismatch: missing {missing}, unexpected {unexpected}")
        for name, p in params.items():
            value = np.asarray(state_dict[name])
            if value.shape != p.shape:
                raise ShapeError(f"'{name}': expected shape {p.shape}, got {value.shape}")
            p.data[...] = value


class Linear(Module):
    """y = x W + b with W stored as (in_features, out_features)."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        precision: str = "f32",
        bias: bool = True,
        zero_init: bool = False,
    ):
        self.in_features = in_features
        self.out_features = out_features
        bound = 1.0 / np.sqrt(in_features)
        w = np.zeros((in_features, out_features)) if zero_init else uniform_(rng, (in_features, out_features), bound)
        self.weight = Parameter(w, precision=precision)
        self.bias = Parameter(np.zeros(out_features), precision=precision) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"linear: input {x.shape} does not end in {self.in_features}")
        y = T.matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y


class LayerNorm(Module):
    def __init__(self, dim: int, precision: str = "f32", eps: float = 1e-5):
        self.eps = eps
        self.gain = Parameter(np.ones(dim), precision=precision)
        self.bias = Parameter(np.zeros(dim), precision=precision)

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    if p == 0.0 or not training:
        return x
    if rng is None:
        raise ContractError("dropout in train mode needs a random generator")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return x * Tensor(keep, precision=x.precision)


def stochastic_depth(
    branch_out: Tensor, p: float, training: bool, rng: Optional[np.random.Generator]
) -> Tensor:
    """Drop a residual branch per sample with probability p, rescaling kept ones by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"stochastic depth probability must lie in [0, 1), got {p}")
    if p == 0.0 or not training:
        return branch_out
    if rng is None:
        raise ContractError("stochastic depth in train mode needs a random generator")
    keep_prob = 1.0 - p
    # work with diff dim tensors, one draw per sample
    shape = (branch_out.shape[0],) + (1,) * (branch_out.ndim - 1)
    mask = np.floor(keep_prob + rng.random(shape)) / keep_prob
    return branch_out * Tensor(mask, precision=branch_out.precision)


class DropPath(Module):
    """Drop paths (Stochastic Depth) per sample (when applied in main path of residual blocks)."""

    def __init__(self, drop_prob: float = 0.0):
        if not 0.0 <= drop_prob < 1.0:
            raise ConfigError(f"stochastic depth probability must lie in [0, 1), got {drop_prob}")
        self.drop_prob = drop_prob

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        return stochastic_depth(x, self.drop_prob, self.training, rng)


def drop_path_schedule(p_max: float, depth: int) -> List[float]:
    """Linear stochastic depth decay rule: layer l gets p_max * l / (L - 1)."""
    if depth == 1:
        return [0.0]
    return [p_max * i / (depth - 1) for i in range(depth)]
