"""Neural layers on top of the tensor primitives.

conv2d is an im2col + batched-matmul cross-correlation (no kernel flip)
with grouped/depthwise support; resampling is space-to-depth (2x2) plus a
1x1 projection and its inverse.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensor import (
    DimensionError,
    Tensor,
    _check_finite,
    add,
    concat,
    mul,
    power,
    record,
    reduce_mean,
    reshape,
    split_channels,
    transpose,
)

_LN_EPS = 1e-6


@dataclass
class ConvWeights:
    """One convolution: kernel (C_out, C_in/groups, k, k), optional bias."""

    kernel: Tensor
    bias: Optional[Tensor] = None
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        co, cg, kh, kw = self.kernel.shape
        if kh != kw:
            raise DimensionError("only square kernels are supported")
        if co % self.groups != 0:
            raise DimensionError("groups must divide C_out")
        if self.bias is not None and self.bias.shape != (co,):
            raise DimensionError("bias must be per-output-channel")

    @property
    def c_out(self) -> int:
        return self.kernel.shape[0]

    @property
    def c_in(self) -> int:
        return self.kernel.shape[1] * self.groups

    @property
    def ksize(self) -> int:
        return self.kernel.shape[2]


def conv2d(x: Tensor, w: ConvWeights) -> Tensor:
    """Grouped 2-D cross-correlation, differentiable in x, kernel and bias.

    Dispatches to fast paths for 1x1 (pure matmul) and depthwise kernels;
    the general grouped case goes through im2col.
    """
    n, c, h, wid = x.shape
    if c != w.c_in:
        raise DimensionError(f"conv2d expects C_in={w.c_in}, got {c}")
    k, s, p, g = w.ksize, w.stride, w.padding, w.groups
    if h + 2 * p < k or wid + 2 * p < k:
        raise DimensionError("spatial extent smaller than kernel after padding")
    if k == 1 and s == 1 and p == 0 and g == 1:
        return _conv1x1(x, w)
    if g == c and g == w.c_out:
        return _conv_depthwise(x, w)
    ho = (h + 2 * p - k) // s + 1
    wo = (wid + 2 * p - k) // s + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    # (N, C, k, k, Ho, Wo) patches, then grouped columns (N, G, Cg*k*k, L)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::s, ::s]  # (N, C, Ho, Wo, k, k)
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, g, (c // g) * k * k, ho * wo)
    wmat = w.kernel.data.reshape(g, w.c_out // g, (c // g) * k * k)
    y = np.matmul(wmat, cols).reshape(n, w.c_out, ho, wo)
    if w.bias is not None:
        y += w.bias.data.reshape(1, -1, 1, 1)
    out = Tensor(y)
    _check_finite(out.data, "conv2d")

    inputs = (x, w.kernel) if w.bias is None else (x, w.kernel, w.bias)

    def backward(gout):
        gmat = gout.reshape(n, g, w.c_out // g, ho * wo)
        gk = np.matmul(gmat, cols.swapaxes(-1, -2)).sum(axis=0).reshape(w.kernel.shape)
        dcols = np.matmul(wmat.swapaxes(-1, -2), gmat)  # (N, G, Cg*k*k, L)
        dwin = dcols.reshape(n, c, k, k, ho, wo)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + ho * s : s, j : j + wo * s : s] += dwin[:, :, i, j]
        gx = gxp[:, :, p : p + h, p : p + wid] if p else gxp
        if w.bias is None:
            return (np.ascontiguousarray(gx), gk)
        return (np.ascontiguousarray(gx), gk, gout.sum(axis=(0, 2, 3)))

    return record(out, inputs, backward)


def _conv1x1(x: Tensor, w: ConvWeights) -> Tensor:
    n, c, h, wid = x.shape
    co = w.c_out
    xr = x.data.reshape(n, c, h * wid)
    wmat = w.kernel.data.reshape(co, c)
    y = np.matmul(wmat, xr)
    if w.bias is not None:
        y += w.bias.data.reshape(1, -1, 1)
    out = Tensor(y.reshape(n, co, h, wid))
    _check_finite(out.data, "conv2d")
    inputs = (x, w.kernel) if w.bias is None else (x, w.kernel, w.bias)

    def backward(gout):
        gr = gout.reshape(n, co, h * wid)
        gk = np.einsum("nol,ncl->oc", gr, xr).reshape(w.kernel.shape)
        gx = np.matmul(wmat.T, gr).reshape(x.shape)
        if w.bias is None:
            return (gx, gk)
        return (gx, gk, gr.sum(axis=(0, 2)))

    return record(out, inputs, backward)


def _conv_depthwise(x: Tensor, w: ConvWeights) -> Tensor:
    n, c, h, wid = x.shape
    k, s, p = w.ksize, w.stride, w.padding
    ho = (h + 2 * p - k) // s + 1
    wo = (wid + 2 * p - k) // s + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    kern = w.kernel.data  # (C, 1, k, k)
    y = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            y += kern[:, 0, i, j].reshape(1, -1, 1, 1) * xp[:, :, i : i + ho * s : s, j : j + wo * s : s]
    if w.bias is not None:
        y += w.bias.data.reshape(1, -1, 1, 1)
    out = Tensor(y)
    _check_finite(out.data, "conv2d")
    inputs = (x, w.kernel) if w.bias is None else (x, w.kernel, w.bias)

    def backward(gout):
        gk = np.empty_like(kern)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                sl = np.s_[:, :, i : i + ho * s : s, j : j + wo * s : s]
                gk[:, 0, i, j] = np.einsum("nchw,nchw->c", gout, xp[sl])
                gxp[sl] += kern[:, 0, i, j].reshape(1, -1, 1, 1) * gout
        gx = np.ascontiguousarray(gxp[:, :, p : p + h, p : p + wid]) if p else gxp
        if w.bias is None:
            return (gx, gk)
        return (gx, gk, gout.sum(axis=(0, 2, 3)))

    return record(out, inputs, backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = _LN_EPS) -> Tensor:
    """Normalize across channels at each spatial location, then affine."""
    if gamma.shape[0] != x.shape[1] or beta.shape[0] != x.shape[1]:
        raise DimensionError("layer_norm affine vectors must match C")
    mu = reduce_mean(x, axis=1, keepdims=True)
    centered = x - mu
    var = reduce_mean(centered * centered, axis=1, keepdims=True)
    inv = power(add(var, eps), -0.5)
    xhat = centered * inv
    g4 = reshape(gamma, (1, -1, 1, 1))
    b4 = reshape(beta, (1, -1, 1, 1))
    return xhat * g4 + b4


def space_to_depth(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, 4C, H/2, W/2), 2x2 blocks to channels."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError("space_to_depth needs even spatial extents")
    y = reshape(x, (n, c, h // 2, 2, w // 2, 2))
    y = transpose(y, (0, 3, 5, 1, 2, 4))
    return reshape(y, (n, 4 * c, h // 2, w // 2))


def depth_to_space(x: Tensor) -> Tensor:
    """(N, 4C, H, W) -> (N, C, 2H, 2W); inverse of space_to_depth."""
    n, c4, h, w = x.shape
    if c4 % 4:
        raise DimensionError("depth_to_space needs C divisible by 4")
    c = c4 // 4
    y = reshape(x, (n, 2, 2, c, h, w))
    y = transpose(y, (0, 3, 4, 1, 5, 2))
    return reshape(y, (n, c, 2 * h, 2 * w))


def downsample(x: Tensor, w: ConvWeights) -> Tensor:
    """Halve spatial size, double channels: space-to-depth then 1x1 conv 4C->2C."""
    return conv2d(space_to_depth(x), w)


def upsample(x: Tensor, w: ConvWeights) -> Tensor:
    """Double spatial size, halve channels: 1x1 conv C->2C then depth-to-space."""
    return depth_to_space(conv2d(x, w))
