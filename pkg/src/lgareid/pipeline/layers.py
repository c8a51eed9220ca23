"""Numpy layers with explicit backward passes.

Each ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
consumes the cache and the upstream gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x, w, b, stride: int = 2, pad: int = 1):
    """3-D convolution over ``(B, Ci, H, W)`` with an odd square kernel."""
    kh = w.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kh, kh), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.einsum("bihwkl,oikl->bohw", win, w, optimize=True) + b[None, :, None, None]
    return out, (x.shape, win, w, stride, pad)


def conv2d_backward(dout, cache):
    shape, win, w, stride, pad = cache
    B, Ci, H, W = shape
    kh = w.shape[2]
    dw = np.einsum("bohw,bihwkl->oikl", dout, win, optimize=True)
    db = dout.sum(axis=(0, 2, 3))
    dcols = np.einsum("bohw,oikl->bihwkl", dout, w, optimize=True)
    ho, wo = dout.shape[2:]
    dxp = np.zeros((B, Ci, H + 2 * pad, W + 2 * pad))
    for k in range(kh):
        for l in range(kh):
            dxp[:, :, k:k + stride * ho:stride, l:l + stride * wo:stride] += dcols[..., k, l]
    return dxp[:, :, pad:pad + H, pad:pad + W], dw, db


def pointwise_forward(x, w, b):
    """1x1 convolution: ``(B, Ci, H, W) -> (B, Co, H, W)``."""
    return np.einsum("oi,bihw->bohw", w, x, optimize=True) + b[None, :, None, None], x


def pointwise_backward(dout, x, w):
    dw = np.einsum("bohw,bihw->oi", dout, x, optimize=True)
    db = dout.sum(axis=(0, 2, 3))
    dx = np.einsum("oi,bohw->bihw", w, dout, optimize=True)
    return dx, dw, db


@dataclass
class BNState:
    """Per-channel batch normalisation of ``(B, c)`` embeddings.

    Running statistics use the biased batch variance, the same estimate used
    for normalising in training mode.
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, c: int, momentum: float = 0.1, eps: float = 1e-5):
        return cls(np.ones(c), np.zeros(c), np.zeros(c), np.ones(c), momentum, eps)


def bn_forward(x, st: BNState, train: bool, update_stats: bool = True):
    if train:
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        if update_stats:
            st.running_mean = (1 - st.momentum) * st.running_mean + st.momentum * mean
            st.running_var = (1 - st.momentum) * st.running_var + st.momentum * var
    else:
        mean, var = st.running_mean, st.running_var
    inv = 1.0 / np.sqrt(var + st.eps)
    xhat = (x - mean) * inv
    return st.gamma * xhat + st.beta, (xhat, inv, train)


def bn_backward(dout, cache, gamma):
    xhat, inv, train = cache
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dxhat = dout * gamma
    if not train:
        return dxhat * inv, dgamma, dbeta
    n = dout.shape[0]
    dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx, dgamma, dbeta
