"""Forward/backward primitives for NHWC tensors.

Each ``*_fwd`` returns ``(out, cache)``; the matching ``*_bwd`` takes the
upstream gradient and the cache and returns the input gradient together with
any parameter gradients.
"""
from __future__ import annotations

import numpy as np

from .. import kernels as K
from ..kernels import col2im, im2col


def conv_fwd(x, w, b, stride=1, pad=1):
    k, _, cin, cout = w.shape
    if k == 1 and stride == 1 and pad == 0:
        cols = x
    else:
        cols = im2col(x, k, stride, pad)
    bsz, ho, wo = cols.shape[:3]
    out = cols.reshape(-1, k * k * cin) @ w.reshape(-1, cout) + b
    return out.reshape(bsz, ho, wo, cout), (cols, x.shape, w, stride, pad)


def conv_bwd(dout, cache):
    cols, x_shape, w, stride, pad = cache
    k, _, cin, cout = w.shape
    d2 = dout.reshape(-1, cout)
    c2 = cols.reshape(-1, k * k * cin)
    dw = (c2.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(-1, cout).T).reshape(cols.shape)
    if k == 1 and stride == 1 and pad == 0:
        dx = dcols
    else:
        dx = col2im(dcols, x_shape[1], x_shape[2], stride, pad)
    return dx, dw, db


def group_norm_fwd(x, gamma, beta, groups, eps=1e-5):
    y, xhat, inv = K.group_norm_fwd(x, gamma, beta, groups, eps)
    return y, (xhat, inv, gamma, groups)


def group_norm_bwd(dout, cache):
    xhat, inv, gamma, groups = cache
    return K.group_norm_bwd(dout, xhat, inv, gamma, groups)


def silu_fwd(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s, (x, s)


def silu_bwd(dout, cache):
    x, s = cache
    return dout * (s * (1.0 + x * (1.0 - s)))


def avgpool2_fwd(x):
    bsz, h, w, c = x.shape
    out = x.reshape(bsz, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))
    return out, x.shape


def avgpool2_bwd(dout, shape):
    d = np.repeat(np.repeat(dout, 2, axis=1), 2, axis=2) * 0.25
    return d.reshape(shape)


def upsample2_fwd(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def upsample2_bwd(dout):
    bsz, h, w, c = dout.shape
    return dout.reshape(bsz, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


def timestep_embedding(steps, dim, max_period=10000.0):
    """Sinusoidal features of integer steps, shape (B, dim)."""
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    args = np.asarray(steps, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)
