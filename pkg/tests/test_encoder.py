import pytest
import numpy as np

from kanformer.data import TaskInfo, parse_task
from kanformer.errors import ConfigError, ContractError, ShapeError
from kanformer.models import (
    DropPath,
    EncoderBlock,
    ExpertPool,
    MoE,
    SoftMoeRouter,
    TopKGate,
    MultiHeadAttention,
    PatchEmbedder,
    ScalarTokenEmbedder,
    block_forward,
    build_encoder,
    drop_path_schedule,
    encoder_forward,
    mha_forward,
    stochastic_depth,
)
from kanformer.tensor import Tensor


def test_heads_must_divide_dim():
    with pytest.raises(ConfigError):
        MultiHeadAttention(10, 4)
    assert MultiHeadAttention(12, 4).head_dim == 3


def test_attention_keeps_shape_and_matches_numpy(rng):
    mha = MultiHeadAttention(6, 2, rng=rng, precision="f64")
    x = Tensor(rng.normal(size=(2, 5, 6)), precision="f64")
    out = mha_forward(mha, x)
    assert out.shape == (2, 5, 6)

    def heads(w):
        return (x.data @ w).reshape(2, 5, 2, 3).transpose(0, 2, 1, 3)

    q, k, v = heads(mha.q.weight.data), heads(mha.k.weight.data), heads(mha.v.weight.data)
    a = q @ k.transpose(0, 1, 3, 2) / np.sqrt(3.0)
    a = np.exp(a - a.max(axis=-1, keepdims=True))
    a /= a.sum(axis=-1, keepdims=True)
    y = (a @ v).transpose(0, 2, 1, 3).reshape(2, 5, 6)
    expected = y @ mha.proj.weight.data + mha.proj.bias.data
    np.testing.assert_allclose(out.data, expected, rtol=1e-10, atol=1e-12)


def test_attention_needs_tokens():
    with pytest.raises(ShapeError):
        MultiHeadAttention(4, 2)(Tensor(np.ones((3, 4))))


def test_drop_path_schedule():
    assert drop_path_schedule(0.1, 1) == [0.0]
    np.testing.assert_allclose(drop_path_schedule(0.3, 4), [0.0, 0.1, 0.2, 0.3])


def test_stochastic_depth_identity_in_eval(rng):
    x = Tensor(rng.normal(size=(4, 3, 2)))
    assert stochastic_depth(x, 0.5, False, None) is x
    assert stochastic_depth(x, 0.0, True, None) is x


def test_stochastic_depth_drops_whole_samples(rng):
    x = Tensor(np.ones((64, 3, 2)), precision="f64")
    out = stochastic_depth(x, 0.5, True, rng).data
    per_sample = out.reshape(64, -1)
    assert set(np.unique(per_sample)) <= {0.0, 2.0}
    assert np.all(per_sample.min(axis=1) == per_sample.max(axis=1))
    assert 0 < (per_sample[:, 0] == 0.0).sum() < 64


def test_stochastic_depth_errors():
    x = Tensor(np.ones((2, 2)))
    with pytest.raises(ConfigError):
        stochastic_depth(x, 1.0, True, np.random.default_rng(0))
    with pytest.raises(ContractError):
        stochastic_depth(x, 0.5, True, None)
    with pytest.raises(ConfigError):
        DropPath(-0.1)


def test_patch_embedder_token_order():
    emb = PatchEmbedder(48, patch_size=4, precision="f64")
    emb.proj.weight.data[...] = np.eye(48)
    images = np.arange(2 * 8 * 8 * 3, dtype=np.float64).reshape(2, 8, 8, 3)
    tokens = emb(images)
    assert tokens.shape == (2, 4, 48)
    # token 1 is the top-right patch, flattened row, column, channel
    np.testing.assert_array_equal(tokens.data[0, 1], images[0, 0:4, 4:8, :].reshape(-1))
    np.testing.assert_array_equal(tokens.data[1, 2], images[1, 4:8, 0:4, :].reshape(-1))


def test_patch_embedder_errors():
    emb = PatchEmbedder(8, patch_size=4)
    with pytest.raises(ShapeError):
        emb(np.zeros((1, 6, 8, 3)))
    with pytest.raises(ContractError):
        emb(np.zeros((1, 8, 8)))


def test_scalar_embedder(rng):
    emb = ScalarTokenEmbedder(5, 3, rng=rng, precision="f64")
    x = rng.normal(size=(4, 3))
    tokens = emb(x)
    assert tokens.shape == (4, 3, 5)
    np.testing.assert_allclose(tokens.data[2, 1], x[2, 1] * emb.lift.data[0] + emb.bias.data)
    with pytest.raises(ContractError):
        emb(np.zeros((4, 2)))


def test_build_encoder_regression(tiny_cfg, rng):
    task = parse_task(tiny_cfg.task)
    enc = build_encoder(tiny_cfg, task, rng)
    assert enc.depth == tiny_cfg.model.layers
    out = encoder_forward(enc, rng.normal(size=(5, task.arity)))
    assert out.shape == (5,)
    assert not enc.training


def test_build_encoder_classification(tiny_cfg, rng):
    tiny_cfg.task = "cifar10"
    tiny_cfg.model.patch_size = 8
    task = TaskInfo("cifar10", "classification", "images", image_shape=(16, 16, 3), num_classes=3)
    enc = build_encoder(tiny_cfg, task, rng)
    logits = encoder_forward(enc, rng.normal(size=(2, 16, 16, 3)))
    assert logits.shape == (2, 3)


def test_build_encoder_rejects_indivisible_patches(tiny_cfg, rng):
    tiny_cfg.model.patch_size = 5
    task = TaskInfo("cifar10", "classification", "images", image_shape=(32, 32, 3), num_classes=10)
    with pytest.raises(ConfigError):
        build_encoder(tiny_cfg, task, rng)


def test_eval_forward_is_deterministic(tiny_cfg, rng):
    tiny_cfg.model.p_max = 0.5
    enc = build_encoder(tiny_cfg, parse_task(tiny_cfg.task), rng)
    x = rng.normal(size=(6, 2))
    first = encoder_forward(enc, x, "eval").data
    second = encoder_forward(enc, x, "eval", rng=np.random.default_rng(123)).data
    assert np.array_equal(first, second)


def test_train_forward_depends_on_the_dropout_stream(tiny_cfg, rng):
    tiny_cfg.model.dropout = 0.5
    enc = build_encoder(tiny_cfg, parse_task(tiny_cfg.task), rng)
    x = rng.normal(size=(6, 2))
    a = encoder_forward(enc, x, "train", np.random.default_rng(1)).data
    b = encoder_forward(enc, x, "train", np.random.default_rng(1)).data
    c = encoder_forward(enc, x, "train", np.random.default_rng(2)).data
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_block_forward_mode(tiny_cfg, rng):
    enc = build_encoder(tiny_cfg, parse_task(tiny_cfg.task), rng)
    x = Tensor(rng.normal(size=(2, 2, tiny_cfg.model.dim)).astype(np.float32))
    assert block_forward(enc.blocks[0], x).shape == x.shape
    with pytest.raises(ContractError):
        block_forward(enc.blocks[0], x, mode="test")


def _block(router, rng):
    pool = ExpertPool.from_config(6, 4, rng, precision="f64", grid_size=4)
    if router == "soft":
        gate = SoftMoeRouter(6, 4, slots=2, rng=rng, precision="f64")
    else:
        gate = TopKGate(6, 4, 2, rng=rng, precision="f64")
    return EncoderBlock(6, 2, MoE(pool, gate), rng=rng, precision="f64")


@pytest.mark.parametrize("router", ["topk", "soft"])
def test_block_adds_attention_then_expert_branch(router, rng):
    blk = _block(router, rng)
    x = Tensor(rng.normal(size=(2, 5, 6)), precision="f64")
    y = block_forward(blk, x).data
    h = x.data + blk.attn(blk.norm1(x)).data
    expert_branch = blk.moe(blk.norm2(Tensor(h, precision="f64"))).data
    np.testing.assert_allclose(y - h, expert_branch, atol=1e-12)


@pytest.mark.parametrize("router", ["topk", "soft"])
def test_block_with_silent_branches_is_identity(router, rng):
    blk = _block(router, rng)
    blk.attn.proj.weight.data[...] = 0.0
    blk.attn.proj.bias.data[...] = 0.0
    for expert in blk.moe.pool.experts:
        if expert.kind == "mlp":
            expert.fc2.weight.data[...] = 0.0
            expert.fc2.bias.data[...] = 0.0
        else:
            expert.w_spline.data[...] = 0.0
    x = Tensor(rng.normal(size=(2, 5, 6)), precision="f64")
    assert np.array_equal(block_forward(blk, x).data, x.data)


def test_state_dict_round_trip_and_errors(tiny_cfg):
    task = parse_task(tiny_cfg.task)
    a = build_encoder(tiny_cfg, task, np.random.default_rng(0))
    b = build_encoder(tiny_cfg, task, np.random.default_rng(1))
    b.load_state_dict(a.state_dict())
    x = np.random.default_rng(2).normal(size=(3, 2))
    assert np.array_equal(encoder_forward(a, x).data, encoder_forward(b, x).data)

    state = a.state_dict()
    name = next(iter(state))
    with pytest.raises(ShapeError):
        b.load_state_dict({**state, name: np.zeros((1, 1, 1))})
    state.pop(name)
    with pytest.raises(ContractError):
        b.load_state_dict(state)
