"""Forward/backward primitives for plane-stacked convolutions and small MLPs.

Activations are channel-last arrays of shape (P, W, H, C) where P indexes
independent planes; each plane has its own conv weights of shape
(P, k, k, C_in, C_out).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LEAK = 0.2


def leaky_relu(x, slope=LEAK):
    return np.where(x > 0, x, slope * x)


def leaky_relu_backward(dy, x, slope=LEAK):
    return np.where(x > 0, dy, slope * dy)


def sigmoid(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _im2col(x, k):
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (P, W, H, C, k, k)
    P, W, H, C = x.shape
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(P, W * H, k * k * C)


def conv_forward(x, w, b):
    """Stride-1 'same' convolution with zero padding, one kernel per plane."""
    P, W, H, C = x.shape
    k = w.shape[1]
    if w.shape[3] != C:
        raise ValueError(f"conv expects {w.shape[3]} input channels, got {C}")
    cols = x.reshape(P, W * H, C) if k == 1 else _im2col(x, k)
    y = np.matmul(cols, w.reshape(P, k * k * C, -1)) + b[:, None, :]
    return y.reshape(P, W, H, -1), cols


def conv_backward(dy, cols, x_shape, w):
    P, W, H, C = x_shape
    k = w.shape[1]
    cout = w.shape[4]
    g = dy.reshape(P, W * H, cout)
    dw = np.matmul(cols.transpose(0, 2, 1), g).reshape(w.shape)
    db = g.sum(axis=1)
    dcols = np.matmul(g, w.reshape(P, k * k * C, cout).transpose(0, 2, 1))
    if k == 1:
        return dcols.reshape(x_shape), dw, db
    p = k // 2
    dcols = dcols.reshape(P, W, H, k, k, C)
    dxp = np.zeros((P, W + 2 * p, H + 2 * p, C), dtype=dy.dtype)
    for di in range(k):
        for dj in range(k):
            dxp[:, di:di + W, dj:dj + H] += dcols[:, :, :, di, dj]
    return dxp[:, p:p + W, p:p + H], dw, db


# Cross-plane exchange. Planes are (XY, XZ, YZ) with grid axes (u, v).
# For each target plane: (source plane, grid axis averaged away) for the
# u-slot (profile varies along target u) and the v-slot (varies along target v).
EXCHANGE = (
    ((1, 1), (2, 1)),  # XY <- x-profile of XZ (mean over z), y-profile of YZ (mean over z)
    ((0, 1), (2, 0)),  # XZ <- x-profile of XY (mean over y), z-profile of YZ (mean over y)
    ((0, 0), (1, 0)),  # YZ <- y-profile of XY (mean over x), z-profile of XZ (mean over x)
)


def aggregate_planes(h):
    """Concatenate each plane with the axis-averaged profiles of the other two.

    (3, W, W, K) -> (3, W, W, 3K).
    """
    if h.shape[0] != 3 or h.shape[1] != h.shape[2]:
        raise ValueError(f"triplane-aware aggregation needs three square planes, got {h.shape}")
    _, W, H, K = h.shape
    out = np.empty((3, W, H, 3 * K), dtype=h.dtype)
    out[..., :K] = h
    for t, ((su, au), (sv, av)) in enumerate(EXCHANGE):
        out[t, :, :, K:2 * K] = h[su].mean(axis=au)[:, None, :]
        out[t, :, :, 2 * K:] = h[sv].mean(axis=av)[None, :, :]
    return out


def aggregate_planes_backward(dcat):
    _, W, H, K3 = dcat.shape
    K = K3 // 3
    dh = dcat[..., :K].copy()
    for t, ((su, au), (sv, av)) in enumerate(EXCHANGE):
        gu = dcat[t, :, :, K:2 * K].sum(axis=1)   # profile indexed by target u
        gv = dcat[t, :, :, 2 * K:].sum(axis=0)    # profile indexed by target v
        n_u = dh.shape[1 + au]
        n_v = dh.shape[1 + av]
        dh[su] += np.expand_dims(gu, au) / n_u
        dh[sv] += np.expand_dims(gv, av) / n_v
    return dh


def triplane_block_forward(x, w1, b1, w2, b2):
    """Per-plane 3x3 conv + leaky ReLU, cross-plane aggregation, 3K->K conv, residual."""
    if x.shape[0] != 3 or not (x.shape[1] == x.shape[2]):
        raise ValueError(f"plane shape mismatch: {x.shape}")
    a1, cols1 = conv_forward(x, w1, b1)
    h = leaky_relu(a1)
    cat = aggregate_planes(h)
    a2, cols2 = conv_forward(cat, w2, b2)
    cache = (x.shape, cols1, a1, cat.shape, cols2)
    return x + a2, cache


def triplane_block_backward(dy, cache, w1, w2):
    x_shape, cols1, a1, cat_shape, cols2 = cache
    dcat, dw2, db2 = conv_backward(dy, cols2, cat_shape, w2)
    dh = aggregate_planes_backward(dcat)
    da1 = leaky_relu_backward(dh, a1)
    dx, dw1, db1 = conv_backward(da1, cols1, x_shape, w1)
    return dy + dx, (dw1, db1, dw2, db2)


def linear_forward(x, w, b):
    return x @ w + b


def linear_backward(dy, x, w):
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)
