import numpy as np

from einops import rearrange
from typing import List, Optional, Union

import kanformer.tensor as T
from kanformer.errors import ConfigError, ContractError, ShapeError
from kanformer.models.layers import DropPath, LayerNorm, Linear, Module, dropout, drop_path_schedule
from kanformer.models.moe import MoE
from kanformer.tensor import Parameter, Tensor


class MultiHeadAttention(Module):
    def __init__(
        self,
        dim: int,
        num_heads: int = 8,
        rng: Optional[np.random.Generator] = None,
        precision: str = "f32",
    ):
        if num_heads < 1 or dim % num_heads:
            raise ConfigError(f"model.dim ({dim}) must be divisible by model.heads ({num_heads})")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim**-0.5
        self.q = Linear(dim, dim, rng, precision, bias=False)
        self.k = Linear(dim, dim, rng, precision, bias=False)
        self.v = Linear(dim, dim, rng, precision, bias=False)
        self.proj = Linear(dim, dim, rng, precision)

    def _split_heads(self, x: Tensor, B: int, N: int) -> Tensor:
        return T.transpose(T.reshape(x, (B, N, self.num_heads, self.head_dim)), (0, 2, 1, 3))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3:
            raise ShapeError(f"attention expects (B, N, D) tokens, got {x.shape}")
        B, N, C = x.shape
        q = self._split_heads(self.q(x), B, N)
        k = self._split_heads(self.k(x), B, N)
        v = self._split_heads(self.v(x), B, N)

        attn = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * self.scale
        attn = T.softmax_axis(attn, (3,))

        x = T.transpose(T.matmul(attn, v), (0, 2, 1, 3))
        x = T.reshape(x, (B, N, C))
        return self.proj(x)


def mha_forward(mha: MultiHeadAttention, x: Tensor) -> Tensor:
    return mha(x)


class EncoderBlock(Module):
    """Y = X + MHA(LN1(X)) + F(LN2(X + MHA(LN1(X)))), F being the expert mixture."""

    def __init__(
        self,
        dim: int,
        num_heads: int,
        moe: MoE,
        drop_path_prob: float = 0.0,
        dropout_prob: float = 0.1,
        eps: float = 1e-5,
        rng: Optional[np.random.Generator] = None,
        precision: str = "f32",
    ):
        if not 0.0 <= dropout_prob < 1.0:
            raise ConfigError(f"model.dropout must lie in [0, 1), got {dropout_prob}")
        self.norm1 = LayerNorm(dim, precision, eps)
        self.attn = MultiHeadAttention(dim, num_heads, rng, precision)
        self.norm2 = LayerNorm(dim, precision, eps)
        self.moe = moe
        self.drop_path = DropPath(drop_path_prob)
        self.dropout_prob = dropout_prob

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        h = x + self.drop_path(self.attn(self.norm1(x)), rng)
        f = dropout(self.moe(self.norm2(h)), self.dropout_prob, self.training, rng)
        return h + self.drop_path(f, rng)


def block_forward(
    blk: EncoderBlock, x: Tensor, mode: str = "eval", rng: Optional[np.random.Generator] = None
) -> Tensor:
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be 'train' or 'eval', got '{mode}'")
    blk.train(mode == "train")
    return blk(x, rng)


class PatchEmbedder(Module):
    """Image to Patch Embedding"""

    input_kind = "images"

    def __init__(
        self,
        dim: int,
        patch_size: int = 4,
        in_chans: int = 3,
        rng: Optional[np.random.Generator] = None,
        precision: str = "f32",
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.patch_size = patch_size
        self.in_chans = in_chans
        self.precision = precision
        self.proj = Linear(patch_size * patch_size * in_chans, dim, rng, precision)

    def num_tokens(self, height: int, width: int) -> int:
        return (height // self.patch_size) * (width // self.patch_size)

    def forward(self, images: Union[np.ndarray, Tensor]) -> Tensor:
        arr = images.data if isinstance(images, Tensor) else np.asarray(images)
        if arr.ndim != 4 or arr.shape[-1] != self.in_chans:
            raise ContractError(f"patch embedder expects (B, H, W, {self.in_chans}) images, got {arr.shape}")
        _, H, W, _ = arr.shape
        p = self.patch_size
        if H % p or W % p:
            raise ShapeError(f"image size {H}x{W} is not divisible by patch size {p}")
        patches = rearrange(arr, "b (h p1) (w p2) c -> b (h w) (p1 p2 c)", p1=p, p2=p)
        return self.proj(Tensor(patches, precision=self.precision))


class ScalarTokenEmbedder(Module):
    """One token per input variable: x_i * lift + bias."""

    input_kind = "scalars"

    def __init__(
        self,
        dim: int,
        arity: int,
        rng: Optional[np.random.Generator] = None,
        precision: str = "f32",
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.arity = arity
        self.precision = precision
        self.lift = Parameter(rng.uniform(-1.0, 1.0, size=(1, dim)), precision=precision)
        self.bias = Parameter(np.zeros(dim), precision=precision)

    def num_tokens(self) -> int:
        return self.arity

    def forward(self, x: Union[np.ndarray, Tensor]) -> Tensor:
        arr = x.data if isinstance(x, Tensor) else np.asarray(x)
        if arr.ndim != 2 or arr.shape[1] != self.arity:
            raise ContractError(f"scalar embedder expects (B, {self.arity}) variables, got {arr.shape}")
        tokens = Tensor(arr[..., None], precision=self.precision)
        return T.matmul(tokens, self.lift) + self.bias


class Encoder(Module):
    """Embed, add positions, run the blocks, mean-pool tokens, apply the task head."""

    def __init__(
        self,
        embedder: Union[PatchEmbedder, ScalarTokenEmbedder],
        num_tokens: int,
        blocks: List[EncoderBlock],
        dim: int,
        num_outputs: int,
        task_kind: str,
        rng: Optional[np.random.Generator] = None,
        precision: str = "f32",
    ):
        if task_kind not in ("regression", "classification"):
            raise ConfigError(f"unknown task kind '{task_kind}'")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.embedder = embedder
        self.pos_embed = Parameter(rng.normal(0.0, 0.02, size=(num_tokens, dim)), precision=precision)
        self.blocks = list(blocks)
        self.head = Linear(dim, num_outputs, rng, precision)
        self.task_kind = task_kind

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def forward_features(self, inputs, rng: Optional[np.random.Generator] = None) -> Tensor:
        x = self.embedder(inputs)
        if x.shape[1] != self.pos_embed.shape[0]:
            raise ShapeError(
                f"input produced {x.shape[1]} tokens, position table holds {self.pos_embed.shape[0]}"
            )
        x = x + self.pos_embed
        for blk in self.blocks:
            x = blk(x, rng)
        return T.mean(x, axis=1)

    def forward(self, inputs, rng: Optional[np.random.Generator] = None) -> Tensor:
        out = self.head(self.forward_features(inputs, rng))
        if self.task_kind == "regression":
            out = T.reshape(out, (out.shape[0],))
        return out


def encoder_forward(
    enc: Encoder, inputs, mode: str = "eval", rng: Optional[np.random.Generator] = None
) -> Tensor:
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be 'train' or 'eval', got '{mode}'")
    enc.train(mode == "train")
    return enc(inputs, rng)


def build_encoder(cfg, task, rng: np.random.Generator, precision: Optional[str] = None) -> Encoder:
    """Build the encoder described by `cfg.model`, `cfg.moe` and `cfg.kan` for a task.

    `task` carries `kind` (regression | classification), `input_kind`
    (scalars | images), `arity`, `image_shape` and `num_classes`.
    """
    precision = precision or cfg.precision
    dim = cfg.model.dim
    if task.input_kind == "images":
        embedder = PatchEmbedder(dim, cfg.model.patch_size, task.image_shape[-1], rng, precision)
        H, W = task.image_shape[:2]
        if H % cfg.model.patch_size or W % cfg.model.patch_size:
            raise ConfigError(
                f"model.patch_size ({cfg.model.patch_size}) must divide the image size {H}x{W}"
            )
        num_tokens = embedder.num_tokens(H, W)
    elif task.input_kind == "scalars":
        embedder = ScalarTokenEmbedder(dim, task.arity, rng, precision)
        num_tokens = embedder.num_tokens()
    else:
        raise ContractError(f"unknown input kind '{task.input_kind}'")

    # stochastic depth decay rule
    dpr = drop_path_schedule(cfg.model.p_max, cfg.model.layers)
    blocks = [
        EncoderBlock(
            dim,
            cfg.model.heads,
            MoE.from_config(dim, cfg.moe, cfg.kan, rng, precision),
            drop_path_prob=dpr[i],
            dropout_prob=cfg.model.dropout,
            eps=cfg.model.ln_eps,
            rng=rng,
            precision=precision,
        )
        for i in range(cfg.model.layers)
    ]
    num_outputs = 1 if task.kind == "regression" else task.num_classes
    return Encoder(embedder, num_tokens, blocks, dim, num_outputs, task.kind, rng, precision)
