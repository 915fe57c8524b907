"""Hot kernels of the network: convolution lowering and group norm (NHWC).

The compiled ``_kernels`` extension is used when it was built; otherwise the
numpy implementations below are used. Set ``SSB_PURE_PYTHON=1`` to force the
fallback. im2col/col2im agree bitwise across backends; group norm agrees to
rounding (the compiled version accumulates in float64).
"""
from __future__ import annotations

import os

import numpy as np


def out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def im2col_py(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """(B, H, W, C) -> (B, Ho, Wo, k, k, C) patch tensor."""
    b, h, w, c = x.shape
    ho, wo = out_size(h, k, stride, pad), out_size(w, k, stride, pad)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    cols = np.empty((b, ho, wo, k, k, c), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
    return cols


def col2im_py(cols: np.ndarray, h: int, w: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`im2col_py`: scatter-add patches back to (B, H, W, C)."""
    b, ho, wo, k, _, c = cols.shape
    xp = np.zeros((b, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += cols[:, :, :, i, j, :]
    return xp[:, pad:pad + h, pad:pad + w, :] if pad else xp


def group_norm_fwd_py(x, gamma, beta, groups, eps):
    """Returns ``(y, xhat, inv)`` with ``inv`` of shape (B, groups)."""
    bsz, h, w, c = x.shape
    xg = x.reshape(bsz, h, w, groups, c // groups)
    mean = xg.mean(axis=(1, 2, 4), keepdims=True)
    xc = xg - mean
    var = (xc * xc).mean(axis=(1, 2, 4), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(x.shape)
    return xhat * gamma + beta, xhat, inv.reshape(bsz, groups)


def group_norm_bwd_py(dout, xhat, inv, gamma, groups):
    """Returns ``(dx, dgamma, dbeta)``."""
    bsz, h, w, c = xhat.shape
    dgamma = (dout * xhat).sum(axis=(0, 1, 2))
    dbeta = dout.sum(axis=(0, 1, 2))
    dxhat = (dout * gamma).reshape(bsz, h, w, groups, c // groups)
    xg = xhat.reshape(dxhat.shape)
    n = h * w * (c // groups)
    m1 = dxhat.sum(axis=(1, 2, 4), keepdims=True)
    m2 = (dxhat * xg).sum(axis=(1, 2, 4), keepdims=True)
    dx = inv.reshape(bsz, 1, 1, groups, 1) * (dxhat - m1 / n - xg * (m2 / n))
    return dx.reshape(xhat.shape), dgamma, dbeta


try:
    if os.environ.get("SSB_PURE_PYTHON"):
        raise ImportError("pure-Python kernels requested")
    from . import _kernels as _ext
except ImportError:
    _ext = None

BACKEND = "compiled" if _ext is not None else "python"


if _ext is not None:
    def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
        b, h, w, c = x.shape
        ho, wo = out_size(h, k, stride, pad), out_size(w, k, stride, pad)
        cols = np.empty((b, ho, wo, k, k, c), dtype=x.dtype)
        _ext.im2col(np.ascontiguousarray(x), cols, stride, pad)
        return cols

    def col2im(cols: np.ndarray, h: int, w: int, stride: int, pad: int) -> np.ndarray:
        b, ho, wo, k, _, c = cols.shape
        out = np.zeros((b, h, w, c), dtype=cols.dtype)
        _ext.col2im(np.ascontiguousarray(cols), out, stride, pad)
        return out

    def group_norm_fwd(x, gamma, beta, groups, eps):
        x = np.ascontiguousarray(x)
        bsz, c = x.shape[0], x.shape[3]
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        inv = np.empty((bsz, groups), dtype=x.dtype)
        _ext.group_norm_fwd(x, np.ascontiguousarray(gamma), np.ascontiguousarray(beta),
                            groups, eps, y, xhat, inv)
        return y, xhat, inv

    def group_norm_bwd(dout, xhat, inv, gamma, groups):
        dout = np.ascontiguousarray(dout, dtype=xhat.dtype)
        c = xhat.shape[3]
        dx = np.empty_like(xhat)
        dgamma = np.empty(c, dtype=xhat.dtype)
        dbeta = np.empty(c, dtype=xhat.dtype)
        _ext.group_norm_bwd(dout, xhat, inv, np.ascontiguousarray(gamma), groups,
                            dx, dgamma, dbeta)
        return dx, dgamma, dbeta
else:
    im2col = im2col_py
    col2im = col2im_py
    group_norm_fwd = group_norm_fwd_py
    group_norm_bwd = group_norm_bwd_py
