"""Differentiable building blocks for the U-Net, NCHW layout.

Every forward returns ``(output, cache)``; the matching backward consumes the
cache and the upstream gradient. All ops keep the input dtype, so the same code
runs in float32 for training and float64 for finite-difference checks.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


def _check4(x: np.ndarray, name: str = "input") -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (batch, channels, height, width), got shape {x.shape}")


def _pad_amount(k: int, padding: str) -> int:
    if padding == "same":
        if k % 2 != 1:
            raise ShapeError("same padding needs an odd kernel size")
        return (k - 1) // 2
    if padding == "none":
        return 0
    raise ShapeError(f"unknown padding mode {padding!r}")


def conv2d_forward(x, kernel, bias, padding="same", stride=1):
    """Cross-correlation of ``x`` (N, C, H, W) with ``kernel`` (O, C, kh, kw)."""
    _check4(x)
    if kernel.ndim != 4 or kernel.shape[1] != x.shape[1]:
        raise ShapeError(f"kernel {kernel.shape} does not match input channels {x.shape[1]}")
    if bias.shape != (kernel.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} != ({kernel.shape[0]},)")
    if stride not in (1, 2):
        raise ShapeError("stride must be 1 or 2")
    n, c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    ph, pw = _pad_amount(kh, padding), _pad_amount(kw, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    hp, wp = xp.shape[2], xp.shape[3]
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("kernel larger than padded input")
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # (C, kh, kw, N, Ho, Wo) -> rows of the patch matrix
    cols = np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * kh * kw, n * ho * wo)
    out = kernel.reshape(o, -1) @ cols
    out += bias[:, None]
    out = out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3)
    cache = (x.shape, kernel, cols, ph, pw, stride, ho, wo)
    return np.ascontiguousarray(out), cache


def conv2d_backward(gout, cache):
    """Return ``(grad_input, grad_kernel, grad_bias)``."""
    xshape, kernel, cols, ph, pw, stride, ho, wo = cache
    n, c, h, w = xshape
    o, _, kh, kw = kernel.shape
    g = gout.transpose(1, 0, 2, 3).reshape(o, n * ho * wo)
    gbias = g.sum(axis=1)
    gkernel = (g @ cols.T).reshape(kernel.shape)
    gcols = (kernel.reshape(o, -1).T @ g).reshape(c, kh, kw, n, ho, wo)
    gxp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=gout.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, i, j].transpose(1, 0, 2, 3)
    gx = gxp[:, :, ph:ph + h, pw:pw + w]
    return np.ascontiguousarray(gx), gkernel, gbias


def maxpool2x2_forward(x):
    _check4(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max-pool needs even height/width, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    # argmax returns the first maximum: ties route to the top-left-most element
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx)


def maxpool2x2_backward(gout, cache):
    shape, idx = cache
    n, c, h, w = shape
    g4 = np.zeros((n, c, h // 2, w // 2, 4), dtype=gout.dtype)
    np.put_along_axis(g4, idx[..., None], gout[..., None], axis=-1)
    return g4.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


def upconv2x2_forward(x, kernel, bias):
    """Stride-2 transposed convolution; ``kernel`` is (C_in, C_out, 2, 2)."""
    _check4(x)
    if kernel.ndim != 4 or kernel.shape[0] != x.shape[1] or kernel.shape[2:] != (2, 2):
        raise ShapeError(f"upconv kernel {kernel.shape} does not match input {x.shape}")
    if bias.shape != (kernel.shape[1],):
        raise ShapeError(f"bias shape {bias.shape} != ({kernel.shape[1]},)")
    n, c, h, w = x.shape
    o = kernel.shape[1]
    xm = x.transpose(1, 0, 2, 3).reshape(c, n * h * w)
    y = kernel.reshape(c, o * 4).T @ xm
    y = y.reshape(o, 2, 2, n, h, w).transpose(3, 0, 4, 1, 5, 2).reshape(n, o, 2 * h, 2 * w)
    y = y + bias[None, :, None, None]
    return y, (xm, kernel, x.shape)


def upconv2x2_backward(gout, cache):
    xm, kernel, xshape = cache
    n, c, h, w = xshape
    o = kernel.shape[1]
    g = gout.reshape(n, o, h, 2, w, 2).transpose(1, 3, 5, 0, 2, 4).reshape(o * 4, n * h * w)
    gkernel = (xm @ g.T).reshape(kernel.shape)
    gx = (kernel.reshape(c, o * 4) @ g).reshape(c, n, h, w).transpose(1, 0, 2, 3)
    gbias = gout.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(gx), gkernel, gbias


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(gout, mask):
    return gout * mask


def sigmoid(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def mse_loss(pred, target) -> float:
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    diff = pred.astype(np.float64) - target
    return float(np.mean(diff * diff))


def mse_grad(pred, target):
    """Gradient of :func:`mse_loss` w.r.t. ``pred``, in ``pred``'s dtype."""
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    return ((2.0 / pred.size) * (pred - target)).astype(pred.dtype, copy=False)


def mae_metric(pred, target, scale: float = 100.0) -> float:
    """Mean absolute error reported in meters (outputs are heights / ``scale``)."""
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    return float(np.mean(np.abs(pred.astype(np.float64) - target))) * scale
