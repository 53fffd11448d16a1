"""Differentiable neural-network operations on :class:`~counterwarp.tensor.Tensor`.

Convolution and pooling accept a single sample ``(C, H, W)`` or a batch
``(B, C, H, W)``; the single-sample form is lifted to a batch of one
internally so both paths share the same arithmetic.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, _record, as_tensor

__all__ = [
    "matmul",
    "conv2d",
    "relu",
    "avg_pool2d",
    "max_pool2d",
    "upsample_nearest2",
    "softmax_cross_entropy",
]


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes do not chain: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def bwd(g, needs):
        ga = g @ b.data.T if needs[0] else None
        gb = a.data.T @ g if needs[1] else None
        return ga, gb

    return _record((a, b), out_data, bwd)


def relu(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.maximum(x.data, 0.0)
    mask = x.data > 0

    def bwd(g, needs):
        return (g * mask,)

    return _record((x,), out_data, bwd)


def _lift_batch(x: Tensor):
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise DimensionError(f"expected (C,H,W) or (B,C,H,W), got {x.shape}")


def conv2d(x, kernel, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation with zero padding, differentiable in both arguments."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    xd, squeeze = _lift_batch(x)
    if kernel.ndim != 4:
        raise DimensionError(f"kernel must be (C_out,C_in,kh,kw), got {kernel.shape}")
    b, cin, h, w = xd.shape
    cout, kcin, kh, kw = kernel.shape
    if kcin != cin:
        raise DimensionError(f"kernel expects {kcin} input channels, image has {cin}")
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    hp, wp = h + 2 * pad, w + 2 * pad
    if kh > hp or kw > wp:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    if (hp - kh) % stride or (wp - kw) % stride:
        raise DimensionError(
            f"output size not integral: input {h}x{w}, pad {pad}, kernel {kh}x{kw}, stride {stride}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    col = np.empty((b, cin, kh, kw, ho, wo), dtype=np.float64)
    for ki in range(kh):
        for kj in range(kw):
            col[:, :, ki, kj] = xp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride]
    # (b*ho*wo, cin*kh*kw) @ (cin*kh*kw, cout)
    col2 = col.transpose(0, 4, 5, 1, 2, 3).reshape(b * ho * wo, cin * kh * kw)
    kflat = kernel.data.reshape(cout, -1).T
    out_data = (col2 @ kflat).reshape(b, ho, wo, cout).transpose(0, 3, 1, 2)
    if squeeze:
        out_data = out_data[0]

    def bwd(g, needs):
        gb = g[None] if squeeze else g
        gflat = gb.transpose(0, 2, 3, 1).reshape(-1, cout)
        gk = (col2.T @ gflat).T.reshape(kernel.shape) if needs[1] else None
        gx = None
        if needs[0]:
            dcol = (gflat @ kflat.T).reshape(b, ho, wo, cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
            dxp = np.zeros((b, cin, hp, wp), dtype=np.float64)
            for ki in range(kh):
                for kj in range(kw):
                    dxp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += dcol[:, :, ki, kj]
            gx = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
            if squeeze:
                gx = gx[0]
        return gx, gk

    return _record((x, kernel), out_data, bwd)


def _pool_view(xd: np.ndarray, window: int):
    b, c, h, w = xd.shape
    if h % window or w % window:
        raise DimensionError(f"pool window {window} does not divide spatial dims {h}x{w}")
    ho, wo = h // window, w // window
    return xd.reshape(b, c, ho, window, wo, window), ho, wo


def avg_pool2d(x, window: int) -> Tensor:
    x = as_tensor(x)
    xd, squeeze = _lift_batch(x)
    view, ho, wo = _pool_view(xd, window)
    out_data = view.mean(axis=(3, 5))
    if squeeze:
        out_data = out_data[0]
    inv = 1.0 / (window * window)

    def bwd(g, needs):
        gb = g[None] if squeeze else g
        gx = np.repeat(np.repeat(gb * inv, window, axis=2), window, axis=3)
        return (gx[0] if squeeze else gx,)

    return _record((x,), out_data, bwd)


def max_pool2d(x, window: int) -> Tensor:
    """Max over non-overlapping windows; ties route to the first element in
    row-major window order."""
    x = as_tensor(x)
    xd, squeeze = _lift_batch(x)
    view, ho, wo = _pool_view(xd, window)
    b, c = xd.shape[:2]
    flat = view.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, window * window)
    idx = flat.argmax(axis=-1)
    out_data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    if squeeze:
        out_data = out_data[0]

    def bwd(g, needs):
        gb = g[None] if squeeze else g
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], gb[..., None], axis=-1)
        gx = gflat.reshape(b, c, ho, wo, window, window).transpose(0, 1, 2, 4, 3, 5)
        gx = gx.reshape(xd.shape)
        return (gx[0] if squeeze else gx,)

    return _record((x,), out_data, bwd)


def upsample_nearest2(x) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling; backward sums each 2x2 block."""
    x = as_tensor(x)
    xd, squeeze = _lift_batch(x)
    out_data = np.repeat(np.repeat(xd, 2, axis=2), 2, axis=3)
    if squeeze:
        out_data = out_data[0]
    b, c, h, w = xd.shape

    def bwd(g, needs):
        gb = g[None] if squeeze else g
        gx = gb.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5))
        return (gx[0] if squeeze else gx,)

    return _record((x,), out_data, bwd)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], max-stabilized."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"logits must be (B,C), got {logits.shape}")
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    b, c = logits.shape
    if y.shape[0] != b:
        raise DimensionError(f"{b} logit rows but {y.shape[0]} labels")
    if y.min() < 0 or y.max() >= c:
        raise IndexError(f"labels must lie in [0, {c}), got range [{y.min()}, {y.max()}]")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    out_data = np.asarray(-log_probs[np.arange(b), y].mean())
    softmax = exp / denom

    def bwd(g, needs):
        gl = softmax.copy()
        gl[np.arange(b), y] -= 1.0
        return (gl * (g / b),)

    return _record((logits,), out_data, bwd)
