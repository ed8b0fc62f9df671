"""
MLP representation experts and FasterKAN function experts.

Both map (..., D) -> (..., D') token by token, so they can be evaluated on any
gathered subset of tokens or on routed slot inputs.
"""
import numpy as np

from typing import Optional, Union

import kanformer.tensor as T
from kanformer.errors import ConfigError, ContractError, ShapeError
from kanformer.models.layers import Linear, Module, uniform_
from kanformer.tensor import Parameter, Tensor


class MlpExpert(Module):
    """W2 · SiLU(W1 · x + b1) + b2"""

    kind = "mlp"

    def __init__(
        self,
        in_features: int,
        hidden_features: Optional[int] = None,
        out_features: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
        precision: str = "f32",
        zero_init_output: bool = False,
    ):
        out_features = out_features or in_features
        hidden_features = hidden_features or 4 * in_features
        if hidden_features < 1:
            raise ConfigError(f"mlp expert hidden width must be >= 1, got {hidden_features}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.fc1 = Linear(in_features, hidden_features, rng, precision)
        self.fc2 = Linear(hidden_features, out_features, rng, precision, zero_init=zero_init_output)

    def forward(self, x: Tensor) -> Tensor:
        x = self.fc1(x)
        x = T.silu(x)
        x = self.fc2(x)
        return x


def mlp_expert_forward(e: MlpExpert, x: Tensor) -> Tensor:
    return e(x)


def make_grid(grid_min: float, grid_max: float, grid_size: int) -> np.ndarray:
    if grid_size < 2:
        raise ConfigError(f"kan.grid_size must be >= 2, got {grid_size}")
    if not grid_max > grid_min:
        raise ConfigError(f"kan.grid_max ({grid_max}) must exceed kan.grid_min ({grid_min})")
    return np.linspace(grid_min, grid_max, grid_size)


def reflectional_switch(
    x: Tensor, grid: Union[Tensor, np.ndarray], denominator: Union[Tensor, float]
) -> Tensor:
    """1 - tanh((x - g) / denominator)^2 for every feature and grid point.

    Returns shape (..., D, G).
    """
    den = denominator.data if isinstance(denominator, Tensor) else np.asarray(denominator)
    if not np.all(den > 0):
        raise ContractError(f"reflectional switch needs denominator > 0, got {den}")
    if not isinstance(grid, Tensor):
        grid = Tensor(grid, precision=x.precision)
    if grid.ndim != 1:
        raise ShapeError(f"grid must be 1-d, got shape {grid.shape}")
    diff = T.reshape(x, x.shape + (1,)) - grid
    t = T.tanh(diff / denominator)
    return 1.0 - T.square(t)


class FasterKanLayer(Module):
    """LayerNorm, reflectional switch basis over a fixed grid, then a spline weight map.

    The basis tensor (..., D, G) is flattened feature-major, grid-minor: row
    d * G + j of `w_spline` weighs feature d at grid point j.
    """

    kind = "kan"

    def __init__(
        self,
        in_features: int,
        out_features: Optional[int] = None,
        grid_size: int = 8,
        grid_min: float = -2.0,
        grid_max: float = 2.0,
        denominator: Optional[float] = None,
        train_denominator: bool = False,
        eps: float = 1e-5,
        rng: Optional[np.random.Generator] = None,
        precision: str = "f32",
        zero_init_output: bool = False,
    ):
        out_features = out_features or in_features
        rng = rng if rng is not None else np.random.default_rng(0)
        grid = make_grid(grid_min, grid_max, grid_size)
        if denominator is None:
            denominator = (grid_max - grid_min) / (grid_size - 1)
        if denominator <= 0:
            raise ConfigError(f"kan.denominator must be > 0, got {denominator}")

        self.in_features = in_features
        self.grid_size = grid_size
        self.eps = eps
        self.grid = Tensor(grid, precision=precision)
        if train_denominator:
            self.denominator = Parameter(np.asarray(denominator), precision=precision)
        else:
            self.denominator = float(denominator)
        self.ln_gain = Parameter(np.ones(in_features), precision=precision)
        self.ln_bias = Parameter(np.zeros(in_features), precision=precision)
        fan_in = in_features * grid_size
        if zero_init_output:
            w = np.zeros((fan_in, out_features))
        else:
            w = uniform_(rng, (fan_in, out_features), 1.0 / np.sqrt(fan_in))
        self.w_spline = Parameter(w, precision=precision)

    def basis(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"fasterkan: input {x.shape} does not end in {self.in_features}")
        h = T.layer_norm(x, self.ln_gain, self.ln_bias, self.eps)
        return reflectional_switch(h, self.grid, self.denominator)

    def forward(self, x: Tensor) -> Tensor:
        phi = self.basis(x)
        flat = T.reshape(phi, x.shape[:-1] + (self.in_features * self.grid_size,))
        return T.matmul(flat, self.w_spline)


def fasterkan_forward(layer: FasterKanLayer, x: Tensor) -> Tensor:
    return layer(x)
