"""Deterministic synthetic degradations: Gaussian noise, rain streaks,
haze, blur and low light, plus paired-set manifest generation.

All randomness flows through a counter-based Philox generator; Gaussian
samples use Box-Muller on its uniforms so outputs are reproducible across
platforms.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imgio import DataError, load_rgb, save_rgb

logger = logging.getLogger(__name__)

KINDS = ("noise", "rain", "haze", "blur", "lowlight")

DEFAULT_PARAMS = {
    "noise": {"sigma": 25.0},  # on the 0-255 scale
    "rain": {"count": 80, "length": 18.0, "angle": 70.0, "intensity": 0.5},
    "haze": {"transmission": 0.5, "atmosphere": 0.9},
    "blur": {"mode": "gaussian", "sigma": 1.6, "length": 9.0, "angle": 0.0},
    "lowlight": {"gamma": 2.2, "gain": 0.85},
}


@dataclass
class DegradationSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown degradation kind '{self.kind}'")
        merged = dict(DEFAULT_PARAMS[self.kind])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ValueError(f"unknown {self.kind} params: {sorted(unknown)}")
        merged.update(self.params)
        self.params = merged
        self._validate()

    def _validate(self):
        p = self.params
        if self.kind == "noise" and not p["sigma"] > 0:
            raise ValueError("noise sigma must be > 0")
        if self.kind == "haze":
            if not 0.0 < p["transmission"] <= 1.0:
                raise ValueError("haze transmission must be in (0, 1]")
            if not 0.7 <= p["atmosphere"] <= 1.0:
                raise ValueError("haze atmospheric light must be in [0.7, 1.0]")
        if self.kind == "blur" and p["mode"] not in ("gaussian", "motion"):
            raise ValueError("blur mode must be 'gaussian' or 'motion'")
        if self.kind == "lowlight" and (p["gamma"] <= 0 or p["gain"] <= 0):
            raise ValueError("lowlight gamma and gain must be > 0")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params, "seed": self.seed}


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.Philox(seed))


def gaussian_samples(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normals via Box-Muller from Philox uniforms."""
    n = int(np.prod(shape))
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)  # (0, 1]
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
    return z[:n].reshape(shape)


def _smooth_field(rng: np.random.Generator, h: int, w: int, grid: int = 4) -> np.ndarray:
    """Bilinearly upsampled uniform grid in [0, 1]; low-frequency by design."""
    g = rng.random((grid, grid))
    yi = np.linspace(0, grid - 1, h)
    xi = np.linspace(0, grid - 1, w)
    return ndimage.map_coordinates(g, np.meshgrid(yi, xi, indexing="ij"), order=1, mode="nearest")


def _rain_mask(rng: np.random.Generator, h: int, w: int, count: int, length: float, angle: float, intensity: float) -> np.ndarray:
    """Additive bright-streak mask from anti-aliased line segments."""
    mask = np.zeros((h, w))
    theta = np.deg2rad(angle)
    for _ in range(count):
        cy, cx = rng.random() * h, rng.random() * w
        ln = length * (0.6 + 0.8 * rng.random())
        th = theta + (rng.random() - 0.5) * 0.15
        amp = intensity * (0.5 + rng.random())
        t = np.arange(-ln / 2, ln / 2, 0.5)
        ys = cy + t * np.cos(th)
        xs = cx + t * np.sin(th)
        keep = (ys >= 0) & (ys < h - 1) & (xs >= 0) & (xs < w - 1)
        ys, xs = ys[keep], xs[keep]
        y0, x0 = np.floor(ys).astype(int), np.floor(xs).astype(int)
        fy, fx = ys - y0, xs - x0
        # bilinear splat (0.5 weight per sample point keeps streaks thin)
        for dy, dx, wgt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx), (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
            np.add.at(mask, (y0 + dy, x0 + dx), 0.5 * amp * wgt)
    return np.clip(mask, 0.0, 1.0)


def _blur_kernel(mode: str, sigma: float, length: float, angle: float) -> np.ndarray:
    if mode == "gaussian":
        r = max(1, int(np.ceil(3.0 * sigma)))
        x = np.arange(-r, r + 1)
        k1 = np.exp(-(x * x) / (2.0 * sigma * sigma))
        k = np.outer(k1, k1)
    else:  # linear motion
        r = max(1, int(np.ceil(length / 2)))
        size = 2 * r + 1
        k = np.zeros((size, size))
        th = np.deg2rad(angle)
        t = np.arange(-length / 2, length / 2, 0.25)
        ys = r + t * np.sin(th)
        xs = r + t * np.cos(th)
        keep = (ys >= 0) & (ys < size - 1) & (xs >= 0) & (xs < size - 1)
        ys, xs = ys[keep], xs[keep]
        y0, x0 = np.floor(ys).astype(int), np.floor(xs).astype(int)
        fy, fx = ys - y0, xs - x0
        for dy, dx, wgt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx), (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
            np.add.at(k, (y0 + dy, x0 + dx), wgt)
    return k / k.sum()


def degrade(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Apply one degradation to a (3, H, W) image in [0, 1]; deterministic in spec.seed."""
    img = np.asarray(img, dtype=np.float64)
    _, h, w = img.shape
    rng = _rng(spec.seed)
    p = spec.params
    if spec.kind == "noise":
        out = img + (p["sigma"] / 255.0) * gaussian_samples(rng, img.shape)
    elif spec.kind == "rain":
        mask = _rain_mask(rng, h, w, int(p["count"]), p["length"], p["angle"], p["intensity"])
        out = img + mask[None]
    elif spec.kind == "haze":
        t0 = p["transmission"]
        # field in [0.5, 1] keeps t exactly 1 the identity and spatially smooth otherwise
        fld = 0.5 + 0.5 * _smooth_field(rng, h, w)
        t = 1.0 - (1.0 - t0) * fld
        out = img * t[None] + p["atmosphere"] * (1.0 - t[None])
    elif spec.kind == "blur":
        k = _blur_kernel(p["mode"], p["sigma"], p["length"], p["angle"])
        out = np.stack([ndimage.correlate(img[c], k, mode="reflect") for c in range(3)])
    else:  # lowlight
        out = p["gain"] * img ** p["gamma"]
    return np.clip(out, 0.0, 1.0)


def make_clean_image(seed: int, h: int = 128, w: int = 128) -> np.ndarray:
    """Procedural clean sample: smooth color field plus random shapes.

    Desk-scale stand-in for a natural-image corpus; deterministic in seed.
    """
    rng = _rng(seed ^ 0x5EED)
    img = np.stack([_smooth_field(rng, h, w, grid=3) for _ in range(3)])
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(6):
        cy, cx = rng.random() * h, rng.random() * w
        r = (0.05 + 0.15 * rng.random()) * min(h, w)
        color = rng.random(3)
        inside = ((yy - cy) ** 2 + (xx - cx) ** 2) < r * r
        img[:, inside] = 0.3 * img[:, inside] + 0.7 * color[:, None]
    img += 0.03 * _smooth_field(rng, h, w, grid=8)[None]
    return np.clip(img, 0.0, 1.0)


def make_pair_set(clean_dir, specs: list[DegradationSpec], out_manifest, global_seed: int = 0) -> list[dict]:
    """Degrade every image in clean_dir under every spec; write manifest JSON.

    Per-image seeds derive from (global_seed, spec index, image index), so a
    parallel map over images would produce identical outputs.
    """
    clean_dir = Path(clean_dir)
    out_manifest = Path(out_manifest)
    out_dir = out_manifest.parent / "degraded"
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = sorted(p for p in clean_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    entries = []
    for si, spec in enumerate(specs):
        for ii, path in enumerate(paths):
            try:
                img = load_rgb(path)
            except DataError as exc:
                logger.warning("skipping unreadable image: %s", exc)
                continue
            seed = (global_seed * 1_000_003 + si * 10_007 + ii) & 0x7FFFFFFF
            inst = DegradationSpec(spec.kind, dict(spec.params), seed)
            deg = degrade(img, inst)
            out_path = out_dir / f"{path.stem}_{spec.kind}{si}.png"
            save_rgb(out_path, deg)
            entries.append(
                {
                    "degraded": str(out_path),
                    "clean": str(path),
                    "kind": spec.kind,
                    "params": inst.params,
                    "seed": seed,
                }
            )
    if not entries:
        raise DataError(f"no decodable images found in '{clean_dir}'")
    out_manifest.write_text(json.dumps(entries, indent=2))
    return entries


def load_manifest(path) -> list[dict]:
    try:
        entries = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest '{path}': {exc}") from exc
    if not isinstance(entries, list) or not entries:
        raise DataError(f"manifest '{path}' is empty or malformed")
    return entries
