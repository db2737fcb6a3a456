"""PSNR and single-scale SSIM on full RGB images."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .tensor import DimensionError

PSNR_CAP_DB = 100.0

_SSIM_WIN = 11
_SSIM_SIGMA = 1.5
_K1, _K2 = 0.01, 0.03


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE) over all RGB elements, capped at 100 dB."""
    if a.shape != b.shape:
        raise DimensionError(f"psnr shapes disagree: {a.shape} vs {b.shape}")
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(peak * peak / mse))


def _gauss_kernel1d(win: int = _SSIM_WIN, sigma: float = _SSIM_SIGMA) -> np.ndarray:
    r = win // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation of a 2-D image with the 1-D kernel."""
    win = k.size
    v = np.lib.stride_tricks.sliding_window_view(img, win, axis=0)
    v = np.tensordot(v, k, axes=([2], [0]))
    v = np.lib.stride_tricks.sliding_window_view(v, win, axis=1)
    return np.tensordot(v, k, axes=([2], [0]))


def _ssim_channel(a: np.ndarray, b: np.ndarray, peak: float) -> float:
    k = _gauss_kernel1d()
    c1 = (_K1 * peak) ** 2
    c2 = (_K2 * peak) ** 2
    mu_a = _filter_valid(a, k)
    mu_b = _filter_valid(b, k)
    var_a = _filter_valid(a * a, k) - mu_a * mu_a
    var_b = _filter_valid(b * b, k) - mu_b * mu_b
    cov = _filter_valid(a * b, k) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5) per channel, averaged over RGB."""
    if a.shape != b.shape:
        raise DimensionError(f"ssim shapes disagree: {a.shape} vs {b.shape}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if min(a.shape[-2:]) < _SSIM_WIN:
        raise DimensionError(f"images must be at least {_SSIM_WIN}x{_SSIM_WIN} for SSIM")
    return float(np.mean([_ssim_channel(a[c], b[c], peak) for c in range(a.shape[0])]))


@dataclass
class MetricReport:
    psnr_db: float = 0.0
    ssim: float = 0.0
    per_image: list = field(default_factory=list)  # [{"name", "psnr_db", "ssim", "kind"}]

    @classmethod
    def from_pairs(cls, scored: list[dict]) -> "MetricReport":
        """Aggregate per-image scores; aggregates are arithmetic means."""
        if not scored:
            return cls()
        return cls(
            psnr_db=float(np.mean([s["psnr_db"] for s in scored])),
            ssim=float(np.mean([s["ssim"] for s in scored])),
            per_image=list(scored),
        )

    def by_kind(self) -> dict[str, dict[str, float]]:
        groups: dict[str, list[dict]] = {}
        for s in self.per_image:
            groups.setdefault(s.get("kind", "all"), []).append(s)
        return {
            k: {
                "psnr_db": float(np.mean([s["psnr_db"] for s in v])),
                "ssim": float(np.mean([s["ssim"] for s in v])),
                "count": len(v),
            }
            for k, v in sorted(groups.items())
        }

    def to_json(self) -> str:
        return json.dumps(
            {
                "aggregate": {"psnr_db": self.psnr_db, "ssim": self.ssim},
                "by_kind": self.by_kind(),
                "per_image": self.per_image,
            },
            indent=2,
        )
