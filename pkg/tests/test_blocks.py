"""Degradation adaptation blocks: oracles, variants and contracts."""

import numpy as np
import pytest

from ram import blocks as B
from ram import tensor as T
from ram.tensor import DimensionError, Tensor

from oracles import attention_reference, gated_da_reference


def rand(shape, seed=0):
    return np.random.default_rng(seed).uniform(-1.0, 1.0, shape)


class TestAttentionOracle:
    @pytest.mark.parametrize("heads", [1, 2, 4])
    def test_matches_straight_line_reference(self, heads):
        w = B.make_attention(np.random.default_rng(heads), 8, heads)
        x = rand((1, 8, 6, 6), heads)
        got = B.attention_forward(Tensor(x), w).data
        want = attention_reference(x, w)
        np.testing.assert_allclose(got, want, atol=1e-10, rtol=0)

    def test_output_shape_preserved(self):
        w = B.make_attention(np.random.default_rng(0), 6, 3)
        assert B.attention_forward(Tensor(rand((2, 6, 5, 7))), w).shape == (2, 6, 5, 7)

    def test_spatial_mode_runs(self):
        w = B.make_attention(np.random.default_rng(0), 4, 2, mode="spatial")
        assert B.attention_forward(Tensor(rand((1, 4, 5, 5))), w).shape == (1, 4, 5, 5)

    def test_head_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            B.make_attention(np.random.default_rng(0), 4, 3)


class TestGatedDaOracle:
    @pytest.mark.parametrize("granularity", ["scalar", "per_channel_mapped"])
    def test_matches_straight_line_reference(self, granularity):
        rng = np.random.default_rng(0)
        w = B.make_gated_da(rng, 4, temp_granularity=granularity)
        x = rand((1, 4, 6, 6), 5)
        got = B.gated_da_forward(Tensor(x), w).data
        want = gated_da_reference(x, w)
        np.testing.assert_allclose(got, want, atol=1e-10, rtol=0)

    def test_sigmoid_gate_activation(self):
        rng = np.random.default_rng(1)
        w = B.make_gated_da(rng, 4, gate_activation="sigmoid")
        x = rand((1, 4, 6, 6), 5)
        np.testing.assert_allclose(
            B.gated_da_forward(Tensor(x), w).data, gated_da_reference(x, w), atol=1e-10, rtol=0
        )

    def test_capture_records_slices(self):
        rng = np.random.default_rng(0)
        w = B.make_gated_da(rng, 4)
        cap = {}
        B.gated_da_forward(Tensor(rand((1, 4, 6, 6))), w, cap)
        assert cap["gamma"].shape[1] == 4
        assert cap["beta"].shape[1] == 2
        assert cap["alpha"].shape[1] == 2

    def test_gamma_width_must_match_path(self):
        with pytest.raises(DimensionError):
            B.make_gated_da(np.random.default_rng(0), 4, split_ratio=(0.5, 0.25, 0.25))


class TestCrossSigmoid:
    def test_values(self):
        a, g = rand((1, 2, 3, 3)), rand((1, 2, 3, 3), 1)
        ag, ga = B.cross_sigmoid(Tensor(a), Tensor(g))
        np.testing.assert_allclose(ag.data, a + 1.0 / (1.0 + np.exp(-g)), atol=1e-12)
        np.testing.assert_allclose(ga.data, g + 1.0 / (1.0 + np.exp(-a)), atol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            B.cross_sigmoid(Tensor(rand((1, 2, 3, 3))), Tensor(rand((1, 4, 3, 3))))


def make_variant(**overrides):
    rng = np.random.default_rng(42)
    kw = dict(split_mode="interleaved", gate_enabled=True, cross_sigmoid_enabled=True)
    kw.update(overrides)
    return B.make_dab(rng, 8, 2, **kw)


class TestDabVariants:
    def test_all_variants_preserve_shape(self):
        x = Tensor(rand((1, 8, 6, 6)))
        for kw in (
            {"split_mode": "full", "gate_enabled": False},
            {"gate_enabled": False},
            {"split_mode": "contiguous"},
            {"cross_sigmoid_enabled": False},
            {},
        ):
            assert B.dab_forward(x, make_variant(**kw)).shape == x.shape

    def test_interleaved_vs_contiguous_differ(self):
        x = Tensor(rand((1, 8, 6, 6)))
        a = B.dab_forward(x, make_variant()).data
        b = B.dab_forward(x, make_variant(split_mode="contiguous")).data
        assert np.abs(a - b).max() > 1e-8

    def test_no_gate_uses_identity_gate_path(self):
        x = Tensor(rand((1, 8, 6, 6)))
        w = make_variant(gate_enabled=False)
        assert w.gate is None
        assert B.dab_forward(x, w).shape == x.shape

    def test_identity_contract_zero_fuse_and_contract(self):
        x = Tensor(rand((1, 8, 6, 6)))
        w = make_variant()
        w.fuse.kernel.data[:] = 0.0
        w.fuse.bias.data[:] = 0.0
        w.ffn.contract.kernel.data[:] = 0.0
        w.ffn.contract.bias.data[:] = 0.0
        np.testing.assert_array_equal(B.dab_forward(x, w).data, x.data)
