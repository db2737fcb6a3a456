"""Degradation adaptation blocks: skip-split, channel attention, gated path,
cross-sigmoid intertwining and the fused block assembly."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .nn_ops import ConvWeights, conv2d, layer_norm
from .params import trunc_normal
from .tensor import DimensionError, Tensor

SPLIT_MODES = ("interleaved", "contiguous", "full")
GATE_ACTIVATIONS = ("gelu", "sigmoid")
TEMP_GRANULARITIES = ("scalar", "per_channel_mapped")
ATTENTION_MODES = ("channel", "spatial")


# -- weight containers ---------------------------------------------------

@dataclass
class AttentionWeights:
    """Transposed-attention projections: pointwise+depthwise QKV generators,
    output projection and a learnable per-head temperature."""

    qkv_point: ConvWeights
    qkv_depth: ConvWeights
    proj: ConvWeights
    head_temp: Tensor
    heads: int = 1
    mode: str = "channel"


@dataclass
class GatedDaWeights:
    norm_gamma: Tensor
    norm_beta: Tensor
    expand: ConvWeights
    depth: ConvWeights
    gate_combine: ConvWeights
    project: ConvWeights
    tau: Tensor
    split_sizes: tuple[int, int, int] = (0, 0, 0)  # (gamma_w, beta_w, alpha_w)
    gate_activation: str = "gelu"
    temp_granularity: str = "scalar"


@dataclass
class FfnWeights:
    norm_gamma: Tensor
    norm_beta: Tensor
    expand: ConvWeights
    depth: ConvWeights
    contract: ConvWeights


@dataclass
class DabWeights:
    attn: AttentionWeights
    gate: Optional[GatedDaWeights]
    fuse: ConvWeights
    ffn: FfnWeights
    split_mode: str = "interleaved"
    gate_enabled: bool = True
    cross_sigmoid_enabled: bool = True


# -- constructors --------------------------------------------------------

def make_conv(
    rng: np.random.Generator,
    c_in: int,
    c_out: int,
    k: int = 1,
    groups: int = 1,
    bias: bool = True,
    stride: int = 1,
    padding: Optional[int] = None,
) -> ConvWeights:
    kernel = Tensor(trunc_normal(rng, (c_out, c_in // groups, k, k)), requires_grad=True)
    b = Tensor(np.zeros(c_out), requires_grad=True) if bias else None
    return ConvWeights(kernel, b, stride=stride, padding=(k - 1) // 2 if padding is None else padding, groups=groups)


def make_attention(rng: np.random.Generator, c: int, heads: int, mode: str = "channel") -> AttentionWeights:
    if c % heads != 0:
        raise DimensionError(f"heads={heads} must divide attention channels {c}")
    return AttentionWeights(
        qkv_point=make_conv(rng, c, 3 * c, 1),
        qkv_depth=make_conv(rng, 3 * c, 3 * c, 3, groups=3 * c),
        proj=make_conv(rng, c, c, 1),
        head_temp=Tensor(np.ones((heads, 1, 1)), requires_grad=True),
        heads=heads,
        mode=mode,
    )


def make_gated_da(
    rng: np.random.Generator,
    c: int,
    r_expan: int = 2,
    split_ratio: tuple[float, float, float] = (0.25, 0.25, 0.5),
    tau_init: float = 1.0,
    gate_activation: str = "gelu",
    temp_granularity: str = "scalar",
) -> GatedDaWeights:
    """Weights for the gated path over `c` channels.

    `split_ratio` is (alpha, beta, gamma) as fractions of hidden = r_expan*c.
    The gamma slice gates the combined (beta, alpha') features, so its width
    must equal the path width `c` (true for the default r_expan=2, gamma=1/2).
    """
    hidden = r_expan * c
    a_w = int(round(split_ratio[0] * hidden))
    b_w = int(round(split_ratio[1] * hidden))
    g_w = hidden - a_w - b_w
    if a_w <= 0 or b_w <= 0 or g_w <= 0:
        raise DimensionError(f"split ratio {split_ratio} gives empty slice at hidden={hidden}")
    if g_w != c:
        raise DimensionError(f"gamma slice width {g_w} must equal path width {c} to gate the combined features")
    return GatedDaWeights(
        norm_gamma=Tensor(np.ones(c), requires_grad=True),
        norm_beta=Tensor(np.zeros(c), requires_grad=True),
        expand=make_conv(rng, c, hidden, 1),
        depth=make_conv(rng, a_w, a_w, 3, groups=a_w),
        gate_combine=make_conv(rng, b_w + a_w, c, 1),
        project=make_conv(rng, c, c, 1),
        tau=Tensor(np.array([tau_init]), requires_grad=True),
        split_sizes=(g_w, b_w, a_w),
        gate_activation=gate_activation,
        temp_granularity=temp_granularity,
    )


def make_ffn(rng: np.random.Generator, c: int, factor: int = 2) -> FfnWeights:
    h = factor * c
    return FfnWeights(
        norm_gamma=Tensor(np.ones(c), requires_grad=True),
        norm_beta=Tensor(np.zeros(c), requires_grad=True),
        expand=make_conv(rng, c, 2 * h, 1),
        depth=make_conv(rng, 2 * h, 2 * h, 3, groups=2 * h),
        contract=make_conv(rng, h, c, 1),
    )


def make_dab(
    rng: np.random.Generator,
    c: int,
    heads: int,
    r_expan: int = 2,
    ffn_factor: int = 2,
    split_ratio: tuple[float, float, float] = (0.25, 0.25, 0.5),
    tau_init: float = 1.0,
    split_mode: str = "interleaved",
    gate_enabled: bool = True,
    cross_sigmoid_enabled: bool = True,
    attention_mode: str = "channel",
    gate_activation: str = "gelu",
    temp_granularity: str = "scalar",
) -> DabWeights:
    if split_mode not in SPLIT_MODES:
        raise DimensionError(f"unknown split_mode '{split_mode}'")
    if split_mode != "full" and c % 2 != 0:
        raise DimensionError(f"split modes need even C, got {c}")
    att_c = c if split_mode == "full" else c // 2
    gate = None
    if gate_enabled and split_mode != "full":
        gate = make_gated_da(rng, c // 2, r_expan, split_ratio, tau_init, gate_activation, temp_granularity)
    return DabWeights(
        attn=make_attention(rng, att_c, heads, attention_mode),
        gate=gate,
        fuse=make_conv(rng, c, c, 1),
        ffn=make_ffn(rng, c, ffn_factor),
        split_mode=split_mode,
        gate_enabled=gate_enabled,
        cross_sigmoid_enabled=cross_sigmoid_enabled,
    )


# -- forwards ------------------------------------------------------------

def _l2_normalize(x: Tensor, axis: int, eps: float = 1e-12) -> Tensor:
    sq = T.reduce_sum(x * x, axis=axis, keepdims=True)
    return x * T.power(T.add(sq, eps), -0.5)


def attention_forward(x: Tensor, w: AttentionWeights) -> Tensor:
    """Per-head attention over the split channels.

    channel mode: Q/K are L2-normalized along the spatial axis and the score
    matrix is (C_h x C_h), linear in H*W. spatial mode: tokens are pixels and
    the score matrix is (HW x HW).
    """
    n, c, h, wd = x.shape
    if c % w.heads != 0:
        raise DimensionError(f"heads={w.heads} must divide C={c}")
    ch = c // w.heads
    qkv = conv2d(conv2d(x, w.qkv_point), w.qkv_depth)
    q, k, v = T.split_channels(qkv, [c, c, c])
    q = T.reshape(q, (n, w.heads, ch, h * wd))
    k = T.reshape(k, (n, w.heads, ch, h * wd))
    v = T.reshape(v, (n, w.heads, ch, h * wd))
    scale = 1.0 / np.sqrt(ch)
    if w.mode == "channel":
        q = _l2_normalize(q, axis=3)
        k = _l2_normalize(k, axis=3)
        score = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * scale  # (N, heads, Ch, Ch)
        score = T.softmax(score * w.head_temp, axis=-1)
        out = T.matmul(score, v)
    else:  # spatial
        qt = _l2_normalize(T.transpose(q, (0, 1, 3, 2)), axis=3)
        kt = _l2_normalize(T.transpose(k, (0, 1, 3, 2)), axis=3)
        score = T.matmul(qt, T.transpose(kt, (0, 1, 3, 2))) * scale  # (N, heads, HW, HW)
        score = T.softmax(score * w.head_temp, axis=-1)
        out = T.transpose(T.matmul(score, T.transpose(v, (0, 1, 3, 2))), (0, 1, 3, 2))
    out = T.reshape(out, (n, c, h, wd))
    return conv2d(out, w.proj)


def _gather_channels(x: Tensor, idx: np.ndarray) -> Tensor:
    """Differentiable channel gather x[:, idx] (duplicates allowed)."""
    out = Tensor(np.ascontiguousarray(x.data[:, idx]))

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None), idx), g)
        return (gx,)

    return T.record(out, (x,), backward)


def gated_da_forward(x: Tensor, w: GatedDaWeights, capture: Optional[dict] = None) -> Tensor:
    """Gated degradation adaption over the gate-path channels.

    normalize -> spatial mean/std -> sigmoid temperature adjustment ->
    1x1 channel expansion -> (gamma, beta, alpha) split -> depthwise conv on
    alpha scaled by the adjusted temperature -> gated recombination ->
    residual + 1x1 projection.
    """
    if x.shape[1] != w.expand.c_in:
        raise DimensionError(f"gated path expects C={w.expand.c_in}, got {x.shape[1]}")
    g_w, b_w, a_w = w.split_sizes

    xhat = layer_norm(x, w.norm_gamma, w.norm_beta)
    mu, std = T.channel_stats(xhat)
    scale = T.sigmoid(mu + std)  # (N, C, 1, 1)
    if w.temp_granularity == "scalar":
        scale = T.reduce_mean(scale, axis=1, keepdims=True)
    else:  # per_channel_mapped: spread input-channel scales over the alpha slice
        idx = (np.arange(a_w) * x.shape[1]) // a_w
        scale = _gather_channels(scale, idx)
    tau_adj = T.reshape(w.tau, (1, 1, 1, 1)) * scale

    expanded = conv2d(xhat, w.expand)
    gamma, beta, alpha = T.split_channels(expanded, [g_w, b_w, a_w])
    if capture is not None:
        capture["gamma"] = gamma.data
        capture["beta"] = beta.data
        capture["alpha"] = alpha.data
    alpha_p = conv2d(alpha, w.depth) * tau_adj
    combined = conv2d(T.concat_channels([beta, alpha_p]), w.gate_combine)
    act = T.gelu if w.gate_activation == "gelu" else T.sigmoid
    gated = act(gamma) * combined
    return conv2d(gated + x, w.project)


def cross_sigmoid(att: Tensor, gate: Tensor) -> tuple[Tensor, Tensor]:
    """Mutual enrichment: each path gains the sigmoid of the other."""
    if att.shape != gate.shape:
        raise DimensionError(f"cross_sigmoid shapes disagree: {att.shape} vs {gate.shape}")
    return att + T.sigmoid(gate), gate + T.sigmoid(att)


def _ffn_forward(x: Tensor, w: FfnWeights) -> Tensor:
    y = layer_norm(x, w.norm_gamma, w.norm_beta)
    y = conv2d(conv2d(y, w.expand), w.depth)
    half = y.shape[1] // 2
    a, b = T.split_channels(y, [half, half])
    return conv2d(T.gelu(a) * b, w.contract) + x


def dab_forward(x: Tensor, w: DabWeights, capture: Optional[dict] = None) -> Tensor:
    """Full degradation adaptation block; preserves the input shape."""
    if w.split_mode == "full":
        pair = [attention_forward(x, w.attn)]
    else:
        if w.split_mode == "interleaved":
            att_in, gate_in = T.interleaved_split(x)
        else:
            half = x.shape[1] // 2
            att_in, gate_in = T.split_channels(x, [half, half])
        att_out = attention_forward(att_in, w.attn)
        gate_out = gated_da_forward(gate_in, w.gate, capture) if w.gate_enabled else gate_in
        if w.cross_sigmoid_enabled:
            att_out, gate_out = cross_sigmoid(att_out, gate_out)
        pair = [att_out, gate_out]
    fused = conv2d(T.concat_channels(pair) if len(pair) > 1 else pair[0], w.fuse) + x
    return _ffn_forward(fused, w.ffn)
