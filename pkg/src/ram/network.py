"""The full restoration network: patch embedding, 4-level U-shaped
encoder-decoder with skip connections, refinement blocks and a global
residual to the input image."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .blocks import (
    ATTENTION_MODES,
    DabWeights,
    GATE_ACTIVATIONS,
    SPLIT_MODES,
    TEMP_GRANULARITIES,
    dab_forward,
    make_conv,
    make_dab,
)
from .nn_ops import ConvWeights, conv2d, downsample, upsample
from .tensor import DimensionError, Tensor


class ConfigError(ValueError):
    """Invalid architecture or run configuration."""


# Defaults calibrated to a ~6.3M-parameter / ~19G-FLOP (at 224x224) budget:
# capacity is concentrated at the low-resolution bottleneck where compute
# is cheap.
@dataclass
class RamConfig:
    base_channels: int = 24
    depths: tuple[int, int, int, int] = (1, 2, 4, 16)
    refinement_depth: int = 1
    heads: tuple[int, int, int, int] = (1, 2, 4, 8)
    r_expan: int = 2
    ffn_factor: int = 2
    split_ratio: tuple[float, float, float] = (0.25, 0.25, 0.5)  # (alpha, beta, gamma) of hidden
    tau_init: float = 1.0
    split_mode: str = "interleaved"
    gate_enabled: bool = True
    cross_sigmoid_enabled: bool = True
    attention_mode: str = "channel"
    gate_activation: str = "gelu"
    temp_granularity: str = "scalar"
    seed: int = 0

    def __post_init__(self):
        self.depths = tuple(self.depths)
        self.heads = tuple(self.heads)
        self.split_ratio = tuple(self.split_ratio)
        self.validate()

    def validate(self) -> None:
        c = self.base_channels
        if c <= 0 or c % 2:
            raise ConfigError(f"base_channels must be positive and even, got {c}")
        if len(self.depths) != 4 or any(d < 1 for d in self.depths):
            raise ConfigError(f"depths must be 4 values >= 1, got {self.depths}")
        if len(self.heads) != 4 or any(h < 1 for h in self.heads):
            raise ConfigError(f"heads must be 4 positive values, got {self.heads}")
        if self.refinement_depth < 0:
            raise ConfigError("refinement_depth must be >= 0")
        if abs(sum(self.split_ratio) - 1.0) > 1e-9:
            raise ConfigError(f"split_ratio must sum to 1, got {self.split_ratio}")
        if self.split_mode not in SPLIT_MODES:
            raise ConfigError(f"split_mode must be one of {SPLIT_MODES}")
        if self.attention_mode not in ATTENTION_MODES:
            raise ConfigError(f"attention_mode must be one of {ATTENTION_MODES}")
        if self.gate_activation not in GATE_ACTIVATIONS:
            raise ConfigError(f"gate_activation must be one of {GATE_ACTIVATIONS}")
        if self.temp_granularity not in TEMP_GRANULARITIES:
            raise ConfigError(f"temp_granularity must be one of {TEMP_GRANULARITIES}")
        if self.r_expan < 1 or self.ffn_factor < 1:
            raise ConfigError("r_expan and ffn_factor must be >= 1")
        for lvl in range(4):
            w = self.level_width(lvl)
            if self.split_mode != "full" and w % 2:
                raise ConfigError(f"level {lvl + 1} width {w} must be even for split modes")
            att_c = w if self.split_mode == "full" else w // 2
            if att_c % self.heads[lvl]:
                raise ConfigError(f"heads[{lvl}]={self.heads[lvl]} must divide attention width {att_c}")
            if self.gate_enabled and self.split_mode != "full":
                hidden = self.r_expan * (w // 2)
                for r in self.split_ratio:
                    if abs(r * hidden - round(r * hidden)) > 1e-9:
                        raise ConfigError(f"split_ratio {self.split_ratio} is not integral at hidden={hidden}")

    def level_width(self, level: int) -> int:
        """Channel width at 0-based level (0..3)."""
        return self.base_channels * (1 << level)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RamConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class RamModel:
    config: RamConfig
    patch_embed: ConvWeights
    encoder: list  # 4 lists of DabWeights
    downs: list  # 3 ConvWeights (1x1, 4C -> 2C after space-to-depth)
    decoder: list  # levels 3, 2, 1 (0-based 2, 1, 0)
    ups: list  # 3 ConvWeights (1x1, C -> 2C before depth-to-space)
    skip_merges: list  # per decoder level, 1x1 2C -> C
    refinement: list  # DabWeights at base width
    output_head: ConvWeights


def _dab(cfg: RamConfig, rng: np.random.Generator, level: int) -> DabWeights:
    return make_dab(
        rng,
        cfg.level_width(level),
        cfg.heads[level],
        r_expan=cfg.r_expan,
        ffn_factor=cfg.ffn_factor,
        split_ratio=cfg.split_ratio,
        tau_init=cfg.tau_init,
        split_mode=cfg.split_mode,
        gate_enabled=cfg.gate_enabled,
        cross_sigmoid_enabled=cfg.cross_sigmoid_enabled,
        attention_mode=cfg.attention_mode,
        gate_activation=cfg.gate_activation,
        temp_granularity=cfg.temp_granularity,
    )


def build(cfg: RamConfig) -> RamModel:
    """Deterministically initialize the network from cfg.seed."""
    cfg.validate()
    rng = np.random.default_rng(np.random.Philox(cfg.seed))
    c = cfg.base_channels
    patch_embed = make_conv(rng, 3, c, 3)
    encoder = [[_dab(cfg, rng, lvl) for _ in range(cfg.depths[lvl])] for lvl in range(4)]
    downs = [make_conv(rng, 4 * cfg.level_width(lvl), 2 * cfg.level_width(lvl), 1) for lvl in range(3)]
    decoder = [[_dab(cfg, rng, lvl) for _ in range(cfg.depths[lvl])] for lvl in (2, 1, 0)]
    ups = [make_conv(rng, cfg.level_width(lvl), 2 * cfg.level_width(lvl), 1) for lvl in (3, 2, 1)]
    skip_merges = [make_conv(rng, 2 * cfg.level_width(lvl), cfg.level_width(lvl), 1) for lvl in (2, 1, 0)]
    refinement = [_dab(cfg, rng, 0) for _ in range(cfg.refinement_depth)]
    output_head = make_conv(rng, c, 3, 3)
    return RamModel(cfg, patch_embed, encoder, downs, decoder, ups, skip_merges, refinement, output_head)


def block_ids(m: RamModel) -> list[str]:
    ids = []
    for lvl in range(4):
        ids += [f"enc{lvl + 1}.{i}" for i in range(len(m.encoder[lvl]))]
    for di, lvl in enumerate((3, 2, 1)):
        ids += [f"dec{lvl}.{i}" for i in range(len(m.decoder[di]))]
    ids += [f"refine.{i}" for i in range(len(m.refinement))]
    return ids


def forward(m: RamModel, img: Tensor, captures: Optional[dict] = None) -> Tensor:
    """Restore an image batch (N, 3, H, W); H and W must be multiples of 8.

    `captures` maps block id -> dict; tapped blocks stash their gate-path
    (gamma, beta, alpha) slices there during the pass.
    """
    n, c, h, w = img.shape
    if c != 3:
        raise DimensionError(f"expected 3 input channels, got {c}")
    if h % 8 or w % 8:
        raise DimensionError(f"spatial extents must be multiples of 8, got {h}x{w}")

    def run(blocks, tag, x):
        for i, blk in enumerate(blocks):
            cap = captures.get(f"{tag}.{i}") if captures is not None else None
            x = dab_forward(x, blk, cap)
        return x

    x = conv2d(img, m.patch_embed)
    skips = []
    for lvl in range(3):
        x = run(m.encoder[lvl], f"enc{lvl + 1}", x)
        skips.append(x)
        x = downsample(x, m.downs[lvl])
    x = run(m.encoder[3], "enc4", x)
    for di, lvl in enumerate((3, 2, 1)):
        x = upsample(x, m.ups[di])
        x = conv2d(T.concat_channels([x, skips[lvl - 1]]), m.skip_merges[di])
        x = run(m.decoder[di], f"dec{lvl}", x)
    x = run(m.refinement, "refine", x)
    return img + conv2d(x, m.output_head)


def dump_features(
    m: RamModel,
    img: Tensor,
    taps: list[str],
    out_dir,
    clean: Optional[Tensor] = None,
) -> list[str]:
    """Write per-tap channel-mean and gate-slice activation maps as PNGs.

    Emits `<tap>_mean.png` plus `<tap>_{alpha,beta,gamma}.png` per tap, and
    `error.png` when a clean reference is supplied. Returns written paths.
    """
    from .imgio import save_gray

    valid = set(block_ids(m))
    for tap in taps:
        if tap not in valid:
            raise ConfigError(f"unknown tap '{tap}'; valid ids look like enc1.0, dec3.2, refine.0")
    captures = {tap: {} for tap in taps}
    out = forward(m, img, captures)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name: str, chw: np.ndarray) -> None:
        amap = chw.mean(axis=0)
        path = out_dir / f"{name}.png"
        save_gray(path, amap)
        written.append(str(path))

    for tap in taps:
        cap = captures[tap]
        full = np.concatenate([cap["gamma"], cap["beta"], cap["alpha"]], axis=1)
        emit(f"{tap}_mean", full[0])
        for slice_name in ("alpha", "beta", "gamma"):
            emit(f"{tap}_{slice_name}", cap[slice_name][0])
    if clean is not None:
        emit("error", np.abs(out.data[0] - clean.data[0]))
    return written
