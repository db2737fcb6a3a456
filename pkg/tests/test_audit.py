"""Parameter and FLOP accounting."""

import numpy as np
import pytest

from ram.audit import (
    _conv_flops,
    attention_flop_ratio,
    attention_matmul_flops,
    count_flops,
    count_params,
)
from ram.network import RamConfig, build
from ram.params import named_params

TINY = dict(base_channels=8, depths=(1, 1, 1, 1), refinement_depth=1, heads=(1, 1, 1, 1))


class TestParamCount:
    def test_table_sums_to_total(self):
        m = build(RamConfig(**TINY))
        total, table = count_params(m)
        assert total == sum(table.values())

    def test_total_matches_named_params(self):
        m = build(RamConfig(**TINY))
        total, _ = count_params(m)
        assert total == sum(p.size for _, p in named_params(m))

    def test_patch_embed_closed_form(self):
        m = build(RamConfig(**TINY))
        _, table = count_params(m)
        assert table["patch_embed"] == 8 * 3 * 3 * 3 + 8  # kernel + bias


class TestFlopCount:
    def test_conv_flops_closed_form(self):
        from ram.blocks import make_conv

        w = make_conv(np.random.default_rng(0), 4, 6, 3)
        # 2 FLOPs per MAC plus one bias add per output element
        assert _conv_flops(w, 100) == 2 * 100 * 6 * 4 * 9 + 100 * 6

    def test_table_sums_to_total(self):
        m = build(RamConfig(**TINY))
        total, table = count_flops(m, 32, 32)
        assert total == sum(v["flops"] for v in table.values())

    def test_flops_scale_with_resolution(self):
        m = build(RamConfig(**TINY))
        t32, _ = count_flops(m, 32, 32)
        t64, _ = count_flops(m, 64, 64)
        assert 3.5 < t64 / t32 < 4.5

    def test_requires_multiple_of_8(self):
        m = build(RamConfig(**TINY))
        with pytest.raises(ValueError):
            count_flops(m, 30, 30)


class TestAttentionRatio:
    def test_channel_split_is_quarter(self):
        m = build(RamConfig(**TINY))
        measured, predicted = attention_flop_ratio(m, 32, 32)
        assert predicted == 0.25
        assert measured == pytest.approx(0.25, abs=1e-12)

    def test_spatial_split_is_half(self):
        m = build(RamConfig(**TINY, attention_mode="spatial"))
        measured, predicted = attention_flop_ratio(m, 32, 32)
        assert predicted == 0.5
        assert measured == pytest.approx(0.5, abs=1e-12)

    def test_full_mode_is_unity(self):
        m = build(RamConfig(**TINY, split_mode="full", gate_enabled=False))
        assert attention_flop_ratio(m, 32, 32) == (1.0, 1.0)

    def test_matmul_flops_positive(self):
        m = build(RamConfig(**TINY))
        assert attention_matmul_flops(m, 32, 32) > 0
