from .layers import Module, Linear, LayerNorm, DropPath, dropout, stochastic_depth, drop_path_schedule
from .bspline import BSplineBasis, bspline_eval
from .experts import (
    MlpExpert,
    FasterKanLayer,
    make_grid,
    mlp_expert_forward,
    reflectional_switch,
    fasterkan_forward,
)
from .moe import (
    ExpertPool,
    SoftMoeRouter,
    TopKGate,
    GateOutput,
    MoE,
    compute_logits,
    dispatch_weights,
    route_inputs,
    combine_outputs,
    select_topk,
    topk_gate,
    moe_forward,
)
from .encoder import (
    MultiHeadAttention,
    EncoderBlock,
    PatchEmbedder,
    ScalarTokenEmbedder,
    Encoder,
    mha_forward,
    block_forward,
    encoder_forward,
    build_encoder,
)
