"""Parameter initialization and traversal over nested weight dataclasses."""

from __future__ import annotations

import dataclasses
from typing import Iterator

import numpy as np
from scipy.special import ndtr, ndtri

from .tensor import Tensor


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float64) -> np.ndarray:
    """Normal(0, std) truncated to +-2 std via inverse-CDF (deterministic)."""
    lo, hi = ndtr(-2.0), ndtr(2.0)
    u = rng.random(shape) * (hi - lo) + lo
    return (ndtri(u) * std).astype(dtype)


def named_params(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Depth-first walk over dataclass fields / lists, yielding learnable tensors."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, (Tensor, list, tuple)) or dataclasses.is_dataclass(v):
                name = f"{prefix}.{f.name}" if prefix else f.name
                yield from named_params(v, name)
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            yield from named_params(v, f"{prefix}.{i}")


def param_count(obj) -> int:
    return sum(t.size for _, t in named_params(obj))
