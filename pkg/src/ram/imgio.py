"""8-bit PNG codec helpers; pixel<->float mapping is v/255 and
round(clamp(v, 0, 1) * 255)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


class DataError(Exception):
    """Unreadable or malformed image/manifest data."""


def load_rgb(path) -> np.ndarray:
    """Load an image as float64 (3, H, W) in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as exc:
        raise DataError(f"cannot decode image '{path}': {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_rgb(path, chw: np.ndarray) -> None:
    """Save a (3, H, W) float array in [0, 1] as 8-bit RGB PNG."""
    u8 = np.round(np.clip(chw, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(u8.transpose(1, 2, 0), mode="RGB").save(Path(path), format="PNG")


def save_gray(path, hw: np.ndarray) -> None:
    """Save a 2-D map as normalized 8-bit grayscale PNG (constant maps -> mid gray)."""
    lo, hi = float(hw.min()), float(hw.max())
    if hi - lo < 1e-12:
        u8 = np.full(hw.shape, 128, dtype=np.uint8)
    else:
        u8 = np.round((hw - lo) / (hi - lo) * 255.0).astype(np.uint8)
    Image.fromarray(u8, mode="L").save(Path(path), format="PNG")
