"""Parameter and FLOP accounting.

Conventions (fixed so audits stay comparable across configurations):
multiply-accumulates count 2 FLOPs; bias adds and elementwise add/mul count
1 FLOP per element; softmax, GELU, sigmoid and normalization count 5 FLOPs
per element. Attention matmuls (score and score*V products) are tracked in
a separate category so split/full complexity ratios can be audited.
"""

from __future__ import annotations

from dataclasses import replace

from .blocks import AttentionWeights, DabWeights, FfnWeights, GatedDaWeights
from .nn_ops import ConvWeights
from .network import RamModel, build
from .params import param_count, named_params


ELEMWISE = 1
ACT = 5


def count_params(m: RamModel) -> tuple[int, dict[str, int]]:
    """Total learnable scalar count plus a per-module breakdown."""
    table: dict[str, int] = {}
    table["patch_embed"] = param_count(m.patch_embed)
    for lvl in range(4):
        for i, blk in enumerate(m.encoder[lvl]):
            table[f"enc{lvl + 1}.{i}"] = param_count(blk)
    for i, w in enumerate(m.downs):
        table[f"down{i + 1}"] = param_count(w)
    for di, lvl in enumerate((3, 2, 1)):
        table[f"up{lvl}"] = param_count(m.ups[di])
        table[f"skip_merge{lvl}"] = param_count(m.skip_merges[di])
        for i, blk in enumerate(m.decoder[di]):
            table[f"dec{lvl}.{i}"] = param_count(blk)
    for i, blk in enumerate(m.refinement):
        table[f"refine.{i}"] = param_count(blk)
    table["output_head"] = param_count(m.output_head)
    return sum(table.values()), table


def _conv_flops(w: ConvWeights, hw: int) -> int:
    macs = hw * w.c_out * (w.c_in // w.groups) * w.ksize * w.ksize
    f = 2 * macs
    if w.bias is not None:
        f += hw * w.c_out
    return f


def _norm_flops(c: int, hw: int) -> int:
    return ACT * c * hw


def _attention_flops(w: AttentionWeights, h: int, wd: int) -> tuple[int, int]:
    """(other_flops, matmul_flops) for one attention application."""
    c = w.qkv_point.c_in
    hw = h * wd
    ch = c // w.heads
    other = _conv_flops(w.qkv_point, hw) + _conv_flops(w.qkv_depth, hw) + _conv_flops(w.proj, hw)
    other += 2 * ACT * c * hw  # Q/K spatial L2 normalization
    if w.mode == "channel":
        matmul = 2 * 2 * w.heads * ch * ch * hw  # QK^T and score*V
        other += ACT * w.heads * ch * ch  # softmax + temperature over (Ch x Ch)
    else:
        matmul = 2 * 2 * w.heads * hw * hw * ch
        other += ACT * w.heads * hw * hw
    return other, matmul


def _gated_da_flops(w: GatedDaWeights, h: int, wd: int) -> int:
    c = w.expand.c_in
    hw = h * wd
    g_w, b_w, a_w = w.split_sizes
    f = _norm_flops(c, hw)
    f += ACT * c * hw + ACT * c  # channel stats + sigmoid scale
    f += _conv_flops(w.expand, hw)
    f += _conv_flops(w.depth, hw) + ELEMWISE * a_w * hw  # alpha' and tau scaling
    f += _conv_flops(w.gate_combine, hw)
    f += ACT * g_w * hw + ELEMWISE * c * hw  # gate activation and product
    f += ELEMWISE * c * hw  # residual
    f += _conv_flops(w.project, hw)
    return f


def _ffn_flops(w: FfnWeights, h: int, wd: int) -> int:
    c = w.contract.c_out
    hw = h * wd
    h2 = w.expand.c_out
    f = _norm_flops(c, hw)
    f += _conv_flops(w.expand, hw) + _conv_flops(w.depth, hw)
    f += ACT * (h2 // 2) * hw + ELEMWISE * (h2 // 2) * hw  # gelu gate
    f += _conv_flops(w.contract, hw) + ELEMWISE * c * hw  # residual
    return f


def _dab_flops(blk: DabWeights, h: int, wd: int) -> tuple[int, int]:
    hw = h * wd
    other, matmul = _attention_flops(blk.attn, h, wd)
    if blk.gate is not None:
        other += _gated_da_flops(blk.gate, h, wd)
    if blk.cross_sigmoid_enabled and blk.split_mode != "full":
        half = blk.fuse.c_in // 2
        other += 2 * (ACT + ELEMWISE) * half * hw
    other += _conv_flops(blk.fuse, hw) + ELEMWISE * blk.fuse.c_out * hw
    other += _ffn_flops(blk.ffn, h, wd)
    return other, matmul


def count_flops(m: RamModel, h: int, w: int) -> tuple[int, dict[str, dict[str, int]]]:
    """Analytic FLOP count of one forward pass at (h, w); batch of 1."""
    if h % 8 or w % 8:
        raise ValueError("FLOP audit requires H, W multiples of 8")
    table: dict[str, dict[str, int]] = {}

    def put(name, other, matmul=0):
        table[name] = {"flops": other + matmul, "attention_matmul": matmul}

    def blocks(tag, blks, hh, ww):
        for i, blk in enumerate(blks):
            other, matmul = _dab_flops(blk, hh, ww)
            put(f"{tag}.{i}", other, matmul)

    put("patch_embed", _conv_flops(m.patch_embed, h * w))
    hh, ww = h, w
    for lvl in range(3):
        blocks(f"enc{lvl + 1}", m.encoder[lvl], hh, ww)
        hh, ww = hh // 2, ww // 2
        put(f"down{lvl + 1}", _conv_flops(m.downs[lvl], hh * ww))
    blocks("enc4", m.encoder[3], hh, ww)
    for di, lvl in enumerate((3, 2, 1)):
        put(f"up{lvl}", _conv_flops(m.ups[di], hh * ww))
        hh, ww = hh * 2, ww * 2
        put(f"skip_merge{lvl}", _conv_flops(m.skip_merges[di], hh * ww))
        blocks(f"dec{lvl}", m.decoder[di], hh, ww)
    blocks("refine", m.refinement, hh, ww)
    put("output_head", _conv_flops(m.output_head, h * w) + ELEMWISE * 3 * h * w)
    total = sum(v["flops"] for v in table.values())
    return total, table


def attention_matmul_flops(m: RamModel, h: int, w: int) -> int:
    _, table = count_flops(m, h, w)
    return sum(v["attention_matmul"] for v in table.values())


def attention_flop_ratio(m: RamModel, h: int, w: int) -> tuple[float, float]:
    """(measured, predicted) attention-matmul FLOP ratio of this model's
    split configuration versus the full-channel variant."""
    cfg = m.config
    if cfg.split_mode == "full":
        return 1.0, 1.0
    full = build(replace(cfg, split_mode="full", gate_enabled=False))
    measured = attention_matmul_flops(m, h, w) / attention_matmul_flops(full, h, w)
    predicted = 0.25 if cfg.attention_mode == "channel" else 0.5
    return measured, predicted
