"""
Mixture-of-experts feed-forward sublayer.

Two routers share one heterogeneous expert pool:

- SoftMoeRouter: slot embeddings E (NE, S, D) score every token against every
  slot; slots receive softmax-weighted blends of tokens, and token outputs are
  softmax-weighted blends of slot outputs.
- TopKGate: a linear gate scores the NE experts per token; only the k best
  experts are evaluated, grouped per expert, and summed in expert-index order.
"""
import numpy as np

from dataclasses import dataclass
from typing import List, Optional, Union

import kanformer.tensor as T
from kanformer.errors import ConfigError, ContractError, ShapeError
from kanformer.models.experts import FasterKanLayer, MlpExpert
from kanformer.models.layers import Module, uniform_
from kanformer.tensor import Parameter, Tensor

NORM_MODES = ("token", "slot")
EXPERT_MIXES = ("mixed", "mlp", "kan")


class ExpertPool(Module):
    """Ordered experts; in the default mix the first half are MLP, the second half FasterKAN."""

    def __init__(self, experts: List[Module]):
        if len(experts) < 2 or len(experts) % 2:
            raise ConfigError(
                f"moe.num_experts must be an even number >= 2, got {len(experts)}"
            )
        self.experts = list(experts)

    def __len__(self) -> int:
        return len(self.experts)

    def __getitem__(self, i: int) -> Module:
        return self.experts[i]

    @property
    def kinds(self) -> List[str]:
        return [e.kind for e in self.experts]

    @classmethod
    def from_config(
        cls,
        dim: int,
        num_experts: int,
        rng: np.random.Generator,
        precision: str = "f32",
        expert_mix: str = "mixed",
        hidden_ratio: int = 4,
        grid_size: int = 8,
        grid_min: float = -2.0,
        grid_max: float = 2.0,
        denominator: Optional[float] = None,
        train_denominator: bool = False,
        zero_init_output: bool = False,
    ) -> "ExpertPool":
        if num_experts < 2 or num_experts % 2:
            raise ConfigError(f"moe.num_experts must be an even number >= 2, got {num_experts}")
        if expert_mix not in EXPERT_MIXES:
            raise ConfigError(f"moe.expert_mix must be one of {EXPERT_MIXES}, got '{expert_mix}'")

        def mlp():
            return MlpExpert(
                dim, hidden_ratio * dim, dim, rng=rng, precision=precision,
                zero_init_output=zero_init_output,
            )

        def kan():
            return FasterKanLayer(
                dim, dim, grid_size=grid_size, grid_min=grid_min, grid_max=grid_max,
                denominator=denominator, train_denominator=train_denominator,
                rng=rng, precision=precision, zero_init_output=zero_init_output,
            )

        if expert_mix == "mlp":
            experts = [mlp() for _ in range(num_experts)]
        elif expert_mix == "kan":
            experts = [kan() for _ in range(num_experts)]
        else:
            half = num_experts // 2
            experts = [mlp() for _ in range(half)] + [kan() for _ in range(half)]
        return cls(experts)


class SoftMoeRouter(Module):
    def __init__(
        self,
        dim: int,
        num_experts: int,
        slots: int = 1,
        norm_mode: str = "token",
        rng: Optional[np.random.Generator] = None,
        precision: str = "f32",
    ):
        if slots < 1:
            raise ConfigError(f"moe.slots must be >= 1, got {slots}")
        if norm_mode not in NORM_MODES:
            raise ConfigError(f"moe.norm_mode must be one of {NORM_MODES}, got '{norm_mode}'")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.num_experts = num_experts
        self.slots = slots
        self.norm_mode = norm_mode
        self.slot_embeddings = Parameter(
            uniform_(rng, (num_experts, slots, dim), 1.0 / np.sqrt(dim)), precision=precision
        )


def compute_logits(router: SoftMoeRouter, x: Tensor) -> Tensor:
    """logits[b, n, e, s] = <x[b, n], E[e, s]>"""
    ne, s, d = router.slot_embeddings.shape
    if x.ndim != 3 or x.shape[-1] != d:
        raise ShapeError(f"router expects (B, N, {d}) tokens, got {x.shape}")
    b, n, _ = x.shape
    slots = T.transpose(T.reshape(router.slot_embeddings, (ne * s, d)))
    return T.reshape(T.matmul(x, slots), (b, n, ne, s))


def dispatch_weights(logits: Tensor, norm_mode: str = "token") -> Tensor:
    """token: softmax over (NE, S) per token; slot: softmax over tokens per slot."""
    if logits.ndim != 4:
        raise ShapeError(f"dispatch expects (B, N, NE, S) logits, got {logits.shape}")
    if norm_mode == "token":
        return T.softmax_axis(logits, (2, 3))
    if norm_mode == "slot":
        return T.softmax_axis(logits, (1,))
    raise ContractError(f"unknown norm mode '{norm_mode}', expected one of {NORM_MODES}")


def route_inputs(x: Tensor, alpha: Tensor) -> Tensor:
    """z[b, e, s] = sum_n alpha[b, n, e, s] * x[b, n]"""
    if alpha.ndim != 4 or x.ndim != 3 or alpha.shape[:2] != x.shape[:2]:
        raise ShapeError(f"cannot route tokens {x.shape} with weights {alpha.shape}")
    b, n, ne, s = alpha.shape
    a = T.transpose(T.reshape(alpha, (b, n, ne * s)), (0, 2, 1))
    return T.reshape(T.matmul(a, x), (b, ne, s, x.shape[-1]))


def combine_weights(logits: Tensor) -> Tensor:
    return T.softmax_axis(logits, (2, 3))


def combine_outputs(expert_out: Tensor, logits: Tensor) -> Tensor:
    """out[b, n] = sum_{e,s} c[b, n, e, s] * expert_out[b, e, s], c = softmax over (NE, S)."""
    if expert_out.ndim != 4 or logits.ndim != 4:
        raise ShapeError(f"cannot combine outputs {expert_out.shape} with logits {logits.shape}")
    b, n, ne, s = logits.shape
    if expert_out.shape[:3] != (b, ne, s):
        raise ShapeError(f"expert outputs {expert_out.shape} do not match logits {logits.shape}")
    c = T.reshape(combine_weights(logits), (b, n, ne * s))
    y = T.reshape(expert_out, (b, ne * s, expert_out.shape[-1]))
    return T.matmul(c, y)


class TopKGate(Module):
    def __init__(
        self,
        dim: int,
        num_experts: int,
        k: int = 2,
        renormalize: bool = False,
        rng: Optional[np.random.Generator] = None,
        precision: str = "f32",
    ):
        if not 1 <= k <= num_experts:
            raise ContractError(f"top-k needs 1 <= k <= {num_experts}, got k={k}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.num_experts = num_experts
        self.k = k
        self.renormalize = renormalize
        self.weight = Parameter(
            uniform_(rng, (dim, num_experts), 1.0 / np.sqrt(dim)), precision=precision
        )
        self.last_selection: Optional[np.ndarray] = None
        self.last_load: Optional[np.ndarray] = None


@dataclass
class GateOutput:
    weights: Tensor
    indices: np.ndarray
    probs: Tensor


def select_topk(logits: Tensor, k: int, renormalize: bool = False) -> GateOutput:
    """Keep the k largest softmax weights per row of the last axis; ties go to the lower index."""
    num_experts = logits.shape[-1]
    if not 1 <= k <= num_experts:
        raise ContractError(f"top-k needs 1 <= k <= {num_experts}, got k={k}")
    probs = T.softmax_axis(logits, (-1,))
    indices = np.argsort(-probs.data, axis=-1, kind="stable")[..., :k]
    mask = np.zeros(probs.shape, dtype=probs.data.dtype)
    np.put_along_axis(mask, indices, 1.0, axis=-1)
    weights = probs * Tensor(mask, precision=probs.precision)
    if renormalize:
        weights = weights / T.ops.sum(weights, axis=-1, keepdims=True)
    return GateOutput(weights, indices, probs)


def topk_gate(gate: TopKGate, x: Tensor) -> GateOutput:
    if x.shape[-1] != gate.weight.shape[0]:
        raise ShapeError(f"gate expects tokens of width {gate.weight.shape[0]}, got {x.shape}")
    return select_topk(T.matmul(x, gate.weight), gate.k, gate.renormalize)


def _soft_forward(pool: ExpertPool, router: SoftMoeRouter, x: Tensor) -> Tensor:
    logits = compute_logits(router, x)
    alpha = dispatch_weights(logits, router.norm_mode)
    z = route_inputs(x, alpha)
    outputs = [expert(T.take(z, [e], axis=1)) for e, expert in enumerate(pool.experts)]
    return combine_outputs(T.concat(outputs, axis=1), logits)


def _topk_forward(pool: ExpertPool, gate: TopKGate, x: Tensor) -> Tensor:
    b, n, d = x.shape
    gated = topk_gate(gate, x)
    rows_total = b * n
    tokens = T.reshape(x, (rows_total, d))
    weights = T.reshape(gated.weights, (rows_total, len(pool)))
    selection = gated.indices.reshape(rows_total, gate.k)

    load = np.zeros(len(pool), dtype=np.int64)
    out = None
    # accumulate in fixed expert-index order
    for e, expert in enumerate(pool.experts):
        rows = np.flatnonzero((selection == e).any(axis=1))
        if rows.size == 0:
            continue
        load[e] = rows.size
        y = expert(T.take(tokens, rows, axis=0))
        w = T.take(T.take(weights, [e], axis=1), rows, axis=0)
        contrib = T.scatter_add_rows(y * w, rows, rows_total)
        out = contrib if out is None else out + contrib

    gate.last_selection = gated.indices
    gate.last_load = load
    return T.reshape(out, (b, n, d))


def moe_forward(pool: ExpertPool, router: Union[SoftMoeRouter, TopKGate], x: Tensor) -> Tensor:
    if x.ndim != 3:
        raise ShapeError(f"moe expects (B, N, D) tokens, got {x.shape}")
    if router.num_experts != len(pool):
        raise ContractError(
            f"router is sized for {router.num_experts} experts, pool has {len(pool)}"
        )
    if isinstance(router, SoftMoeRouter):
        return _soft_forward(pool, router, x)
    if isinstance(router, TopKGate):
        return _topk_forward(pool, router, x)
    raise ContractError(f"unsupported router {type(router).__name__}")


class MoE(Module):
    """Expert pool plus router, used as the feed-forward sublayer of an encoder block."""

    def __init__(self, pool: ExpertPool, router: Union[SoftMoeRouter, TopKGate]):
        self.pool = pool
        self.router = router

    @property
    def last_selection(self) -> Optional[np.ndarray]:
        return getattr(self.router, "last_selection", None)

    def forward(self, x: Tensor) -> Tensor:
        return moe_forward(self.pool, self.router, x)

    @classmethod
    def from_config(cls, dim: int, moe_cfg, kan_cfg, rng: np.random.Generator, precision: str = "f32"):
        pool = ExpertPool.from_config(
            dim,
            moe_cfg.num_experts,
            rng,
            precision=precision,
            expert_mix=moe_cfg.expert_mix,
            hidden_ratio=moe_cfg.hidden_ratio,
            grid_size=kan_cfg.grid_size,
            grid_min=kan_cfg.grid_min,
            grid_max=kan_cfg.grid_max,
            denominator=kan_cfg.denominator,
            train_denominator=kan_cfg.train_denominator,
        )
        if moe_cfg.router == "soft":
            router = SoftMoeRouter(
                dim, moe_cfg.num_experts, moe_cfg.slots, moe_cfg.norm_mode, rng=rng, precision=precision
            )
        elif moe_cfg.router == "topk":
            if not 1 <= moe_cfg.top_k <= moe_cfg.num_experts:
                raise ConfigError(
                    f"moe.top_k must lie in [1, {moe_cfg.num_experts}], got {moe_cfg.top_k}"
                )
            router = TopKGate(
                dim, moe_cfg.num_experts, moe_cfg.top_k, moe_cfg.renormalize_topk, rng=rng, precision=precision
            )
        else:
            raise ConfigError(f"moe.router must be 'soft' or 'topk', got '{moe_cfg.router}'")
        return cls(pool, router)
