"""
Finite-difference checks of every differentiable piece of the library, in f64.

Each target builds a small scalar loss from random inputs drawn with the
given seed and compares reverse-mode gradients against central differences.
"""
import numpy as np

from typing import Callable, Dict, List, Tuple

from omegaconf import OmegaConf

import kanformer.tensor as T
from kanformer.data.dataset import TaskInfo
from kanformer.models import FasterKanLayer, MlpExpert, MoE, build_encoder
from kanformer.tensor import GradcheckReport, Tensor, finite_diff_gradcheck, gradcheck_parameters

H = 1e-5


def _weighted_sum(y: Tensor, w: np.ndarray) -> Tensor:
    return T.ops.sum(y * Tensor(w, precision="f64"))


def _unary(op: Callable[[Tensor], Tensor], shape=(3, 4), low=-2.0, high=2.0):
    def target(rng: np.random.Generator, tol: float, atol: float) -> GradcheckReport:
        x = Tensor(rng.uniform(low, high, size=shape), precision="f64")
        w = rng.normal(size=op(x).shape)
        return finite_diff_gradcheck(lambda t: _weighted_sum(op(t), w), x, H, tol, atol)

    return target


def _binary(op: Callable[[Tensor, Tensor], Tensor], other_shape=(3, 4), shape=(4,), low=-2.0, high=2.0):
    """Checks both operands; the second one is broadcast against the first."""

    def target(rng: np.random.Generator, tol: float, atol: float) -> GradcheckReport:
        a = Tensor(rng.uniform(-2.0, 2.0, size=other_shape), precision="f64")
        b = Tensor(rng.uniform(low, high, size=shape), precision="f64")
        w = rng.normal(size=op(a, b).shape)
        left = finite_diff_gradcheck(lambda t: _weighted_sum(op(t, b), w), a, H, tol, atol)
        right = finite_diff_gradcheck(lambda t: _weighted_sum(op(a, t), w), b, H, tol, atol)
        return left if left.max_rel_err >= right.max_rel_err else right

    return target


def _layer_norm(rng, tol, atol):
    gain = Tensor(rng.uniform(0.5, 1.5, size=5), precision="f64")
    bias = Tensor(rng.normal(size=5), precision="f64")
    return _unary(lambda t: T.layer_norm(t, gain, bias), shape=(3, 5))(rng, tol, atol)


def _module_target(build: Callable[[np.random.Generator], object], x_shape):
    """Checks a module's parameters and its input."""

    def target(rng: np.random.Generator, tol: float, atol: float) -> GradcheckReport:
        module = build(rng)
        x = Tensor(rng.normal(size=x_shape), precision="f64")
        w = rng.normal(size=module(x).shape)
        params = module.named_parameters()
        by_params = gradcheck_parameters(
            lambda: _weighted_sum(module(x), w), list(params), H, tol, atol, max_coords=16, rng=rng
        )
        by_input = finite_diff_gradcheck(lambda t: _weighted_sum(module(t), w), x, H, tol, atol)
        return by_params if by_params.max_rel_err >= by_input.max_rel_err else by_input

    return target


def _moe_config(router: str, norm_mode: str = "token"):
    moe = OmegaConf.create(
        {
            "num_experts": 4,
            "slots": 2,
            "router": router,
            "top_k": 2,
            "norm_mode": norm_mode,
            "renormalize_topk": False,
            "expert_mix": "mixed",
            "hidden_ratio": 2,
        }
    )
    kan = OmegaConf.create(
        {"grid_size": 5, "grid_min": -2.0, "grid_max": 2.0, "denominator": None, "train_denominator": True}
    )
    return moe, kan


def _moe(router: str, norm_mode: str = "token"):
    def build(rng):
        moe, kan = _moe_config(router, norm_mode)
        return MoE.from_config(6, moe, kan, rng, precision="f64")

    return build


def tiny_encoder_config():
    moe, kan = _moe_config("topk")
    moe.slots = 1
    return OmegaConf.create(
        {
            "precision": "f64",
            "model": {
                "dim": 16,
                "layers": 2,
                "heads": 4,
                "patch_size": 4,
                "p_max": 0.0,
                "dropout": 0.0,
                "ln_eps": 1e-5,
            },
            "moe": moe,
            "kan": kan,
        }
    )


def _encoder(rng: np.random.Generator, tol: float, atol: float) -> GradcheckReport:
    task = TaskInfo("feynman:tiny", "regression", "scalars", arity=3)
    model = build_encoder(tiny_encoder_config(), task, rng, precision="f64")
    model.eval()
    inputs = rng.uniform(-1.0, 1.0, size=(2, 3))
    w = rng.normal(size=2)
    return gradcheck_parameters(
        lambda: _weighted_sum(model(inputs), w),
        list(model.named_parameters()),
        H,
        tol,
        atol,
        max_coords=8,
        rng=rng,
    )


def gradcheck_targets() -> Dict[str, Callable[[np.random.Generator, float, float], GradcheckReport]]:
    return {
        "add": _binary(T.add),
        "sub": _binary(T.sub),
        "mul": _binary(T.mul),
        "div": _binary(T.div, low=0.5, high=1.5),
        "negate": _unary(T.negate),
        "square": _unary(T.square),
        "tanh": _unary(T.tanh),
        "silu": _unary(T.silu),
        "exp": _unary(T.exp),
        "sum": _unary(lambda t: T.ops.sum(t, axis=1)),
        "mean": _unary(lambda t: T.ops.mean(t, axis=0, keepdims=True)),
        "matmul": _binary(T.matmul, other_shape=(2, 3, 4), shape=(4, 5)),
        "reshape": _unary(lambda t: T.reshape(t, (2, 6))),
        "transpose": _unary(lambda t: T.transpose(t, (2, 0, 1)), shape=(2, 3, 4)),
        "softmax_axis": _unary(lambda t: T.softmax_axis(t, (1, 2)), shape=(2, 3, 4)),
        "log_softmax": _unary(T.log_softmax),
        "layer_norm": _layer_norm,
        "take": _unary(lambda t: T.take(t, [2, 0, 2], axis=0)),
        "scatter_add_rows": _unary(lambda t: T.scatter_add_rows(t, [1, 0, 1], 4)),
        "concat": _unary(lambda t: T.concat([t, T.square(t)], axis=1)),
        "mlp_expert": _module_target(lambda rng: MlpExpert(5, 7, 4, rng=rng, precision="f64"), (2, 3, 5)),
        "fasterkan": _module_target(
            lambda rng: FasterKanLayer(5, 4, grid_size=6, train_denominator=True, rng=rng, precision="f64"),
            (2, 3, 5),
        ),
        "moe_soft_token": _module_target(_moe("soft", "token"), (2, 3, 6)),
        "moe_soft_slot": _module_target(_moe("soft", "slot"), (2, 3, 6)),
        "moe_topk": _module_target(_moe("topk"), (2, 3, 6)),
        "encoder": _encoder,
    }


def run_gradcheck_suite(tol: float = 1e-4, seed: int = 0) -> List[Tuple[str, GradcheckReport]]:
    """Runs every target; coordinates agreeing within tol * 1e-5 in absolute terms count as exact."""
    atol = tol * 1e-5
    results = []
    for i, (name, target) in enumerate(gradcheck_targets().items()):
        rng = np.random.default_rng([seed, i])
        results.append((name, target(rng, tol, atol)))
    return results
