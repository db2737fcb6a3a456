"""PSNR/SSIM unit values and reference agreement."""

import numpy as np
import pytest

from ram.metrics import MetricReport, psnr, ssim
from ram.tensor import DimensionError


def rand_img(shape=(3, 32, 32), seed=0):
    return np.random.default_rng(seed).uniform(0.0, 1.0, shape)


class TestPsnr:
    def test_identical_capped_at_100(self):
        a = rand_img()
        assert psnr(a, a) == 100.0

    def test_uniform_error_exact(self):
        a = rand_img() * 0.0 + 0.5
        b = a + 0.1
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            psnr(rand_img(), rand_img((3, 16, 16)))


class TestSsim:
    def test_identical_is_one(self):
        a = rand_img()
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_matches_skimage_reference(self):
        skimage = pytest.importorskip("skimage.metrics")
        a = rand_img((3, 16, 16), 7)
        b = np.clip(a + 0.05 * np.random.default_rng(8).standard_normal(a.shape), 0, 1)
        want = np.mean(
            [
                skimage.structural_similarity(
                    a[c], b[c], win_size=11, gaussian_weights=True, sigma=1.5,
                    use_sample_covariance=False, data_range=1.0,
                )
                for c in range(3)
            ]
        )
        assert ssim(a, b) == pytest.approx(want, abs=1e-6)

    def test_degraded_scores_lower(self):
        a = rand_img((3, 32, 32), 1)
        noisy = np.clip(a + 0.2 * np.random.default_rng(2).standard_normal(a.shape), 0, 1)
        assert ssim(a, noisy) < ssim(a, a)

    def test_too_small_rejected(self):
        with pytest.raises(DimensionError):
            ssim(rand_img((3, 8, 8)), rand_img((3, 8, 8)))


class TestMetricReport:
    def scored(self):
        return [
            {"name": "a.png", "kind": "noise", "psnr_db": 20.0, "ssim": 0.8},
            {"name": "b.png", "kind": "noise", "psnr_db": 30.0, "ssim": 0.9},
            {"name": "c.png", "kind": "rain", "psnr_db": 25.0, "ssim": 0.7},
        ]

    def test_aggregates_are_means(self):
        r = MetricReport.from_pairs(self.scored())
        assert r.psnr_db == pytest.approx(25.0)
        assert r.ssim == pytest.approx(0.8)

    def test_by_kind_grouping(self):
        by = MetricReport.from_pairs(self.scored()).by_kind()
        assert by["noise"]["psnr_db"] == pytest.approx(25.0)
        assert by["noise"]["count"] == 2
        assert by["rain"]["count"] == 1

    def test_json_round_trip(self):
        import json

        doc = json.loads(MetricReport.from_pairs(self.scored()).to_json())
        assert doc["aggregate"]["psnr_db"] == pytest.approx(25.0)
        assert len(doc["per_image"]) == 3
