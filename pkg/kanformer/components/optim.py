import numpy as np

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from kanformer.errors import ContractError, NonFiniteError, ShapeError
from kanformer.tensor import Tensor


@dataclass
class AdamState:
    step: int = 0
    exp_avg: Dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: Dict[str, np.ndarray] = field(default_factory=dict)


def _adamw_update(p, g, m, v, step, lr, betas, eps, weight_decay):
    beta1, beta2 = betas
    # decoupled weight decay
    p = p * (1.0 - lr * weight_decay)
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return p, m, v


def _check_finite(name: str, g: np.ndarray):
    if not np.all(np.isfinite(g)):
        raise NonFiniteError(f"gradient of parameter '{name}' contains non-finite values")


def adamw_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam step with decoupled weight decay; inputs are left untouched."""
    for name, p in params.items():
        if name not in grads:
            raise ContractError(f"no gradient for parameter '{name}'")
        if grads[name].shape != p.shape:
            raise ShapeError(f"'{name}': gradient {grads[name].shape} does not match parameter {p.shape}")
        _check_finite(name, grads[name])

    step = state.step + 1
    new_params, exp_avg, exp_avg_sq = {}, {}, {}
    for name, p in params.items():
        m = state.exp_avg.get(name, np.zeros_like(p))
        v = state.exp_avg_sq.get(name, np.zeros_like(p))
        new_params[name], exp_avg[name], exp_avg_sq[name] = _adamw_update(
            p, grads[name], m, v, step, lr, betas, eps, weight_decay
        )
    return new_params, AdamState(step, exp_avg, exp_avg_sq)


class AdamW:
    """In-place AdamW over parameter groups.

    Groups are dicts with "params" (a list of (name, Tensor)) and an optional
    "weight_decay" overriding the default.
    """

    def __init__(
        self,
        param_groups: List[dict],
        lr: float,
        betas: Sequence[float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        if lr < 0:
            raise ContractError(f"learning rate must be >= 0, got {lr}")
        self.param_groups = []
        for group in param_groups:
            group = dict(group)
            group.setdefault("lr", lr)
            group.setdefault("weight_decay", weight_decay)
            self.param_groups.append(group)
        self.betas = tuple(betas)
        self.eps = eps
        self.state = AdamState()

    def step(self, grads: Dict[Tensor, Tensor]):
        named = [(name, p) for group in self.param_groups for name, p in group["params"]]
        for name, p in named:
            g = grads.get(p)
            if g is not None:
                _check_finite(name, g.data)

        self.state.step += 1
        for group in self.param_groups:
            for name, p in group["params"]:
                g = grads.get(p)
                g = np.zeros_like(p.data) if g is None else g.data
                m = self.state.exp_avg.get(name, np.zeros_like(p.data))
                v = self.state.exp_avg_sq.get(name, np.zeros_like(p.data))
                new_p, m, v = _adamw_update(
                    p.data, g, m, v, self.state.step, group["lr"], self.betas, self.eps, group["weight_decay"]
                )
                p.data[...] = new_p
                self.state.exp_avg[name] = m
                self.state.exp_avg_sq[name] = v
