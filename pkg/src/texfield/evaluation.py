"""Surrogate single-image FID over fixed viewpoints, and PSNR.

The patch extractor is a fixed seeded random conv stack (3x3, stride 2, ReLU),
not a pretrained network, so absolute values are only comparable with each
other. Reported as "surrogate-SIFID".
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .renderer import ImageBuffer

EXACT = math.inf  # PSNR of identical images
COV_EPS = 1e-6
DEFAULT_CHANNELS = (16, 32, 16)


class EmptyRenderError(ValueError):
    pass


@lru_cache(maxsize=16)
def _patch_weights(seed: int, channels: tuple):
    rng = np.random.default_rng(seed)
    out, cin = [], 3
    for cout in channels:
        w = rng.normal(scale=np.sqrt(2.0 / (9 * cin)), size=(9 * cin, cout))
        b = rng.normal(scale=0.05, size=cout)
        out.append((w, b))
        cin = cout
    return tuple(out)


def conv_stride2(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 conv with stride 2 on an (H, W, C) image, then ReLU.

    Edge padding keeps the response to a constant image constant everywhere.
    """
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)), mode="edge")
    win = sliding_window_view(xp, (3, 3), axis=(0, 1))[::2, ::2]  # (H2, W2, C, 3, 3)
    h2, w2, c = win.shape[:3]
    cols = win.transpose(0, 1, 3, 4, 2).reshape(h2 * w2, 9 * c)
    return np.maximum(cols @ w + b, 0.0).reshape(h2, w2, -1)


def patch_features(img: ImageBuffer, seed: int = 0, channels: Sequence[int] = DEFAULT_CHANNELS) -> np.ndarray:
    """Per-location features of the last layer, restricted to surface pixels.

    Output location (i, j) is centered on input pixel (2i, 2j); it counts as
    surface when that pixel is.
    """
    if img.rgb.size == 0:
        raise EmptyRenderError("empty image")
    x = np.asarray(img.rgb, dtype=np.float64)
    mask = np.asarray(img.mask, dtype=bool)
    for w, b in _patch_weights(seed, tuple(channels)):
        x = conv_stride2(x, w, b)
        mask = mask[::2, ::2]
    if not mask.any():
        raise EmptyRenderError("no surface pixels left after downsampling (background-only render?)")
    return x[mask]


@dataclass(frozen=True, eq=False)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=np.float64).ravel()
        c = np.asarray(self.cov, dtype=np.float64)
        if c.shape != (len(m), len(m)):
            raise ValueError("covariance shape does not match the mean")
        if not np.allclose(c, c.T, atol=1e-8):
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", c)

    @classmethod
    def fit(cls, feats: np.ndarray) -> "GaussianStats":
        f = np.asarray(feats, dtype=np.float64)
        mu = f.mean(axis=0)
        if len(f) < 2:
            return cls(mu, np.zeros((f.shape[1], f.shape[1])))
        c = np.cov(f, rowvar=False)
        return cls(mu, 0.5 * (c + c.T))


def _psd_sqrt(a):
    w, v = np.linalg.eigh(a)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _trace_sqrt_product(a, b):
    ra = _psd_sqrt(a)
    m = ra @ b @ ra
    w = np.linalg.eigvalsh(0.5 * (m + m.T))
    return float(np.sum(np.sqrt(np.clip(w, 0.0, None))))


def frechet_distance(a: GaussianStats, b: GaussianStats, eps: float = COV_EPS) -> float:
    """Squared Frechet distance between two Gaussians (the FID formula).

    ``eps * I`` is added to both covariances before the matrix square root.
    """
    if a.mean.shape != b.mean.shape:
        raise ValueError(f"dimension mismatch: {a.mean.shape[0]} vs {b.mean.shape[0]}")
    n = len(a.mean)
    ca = a.cov + eps * np.eye(n)
    cb = b.cov + eps * np.eye(n)
    d = a.mean - b.mean
    # average both orders so swapping the arguments is exact
    tr = 0.5 * (_trace_sqrt_product(ca, cb) + _trace_sqrt_product(cb, ca))
    # the traces are summed first so swapping the arguments is bit-exact
    return max(float(d @ d + (np.trace(ca) + np.trace(cb)) - 2.0 * tr), 0.0)


def sifid_per_view(source: Sequence[ImageBuffer], target: Sequence[ImageBuffer], seed: int = 0) -> list[float]:
    if len(source) != len(target):
        raise ValueError("source and target render lists differ in length")
    if not source:
        raise EmptyRenderError("no views to compare")
    out = []
    for s, t in zip(source, target):
        out.append(frechet_distance(GaussianStats.fit(patch_features(s, seed)),
                                    GaussianStats.fit(patch_features(t, seed))))
    return out


def sifid_surrogate(source: Sequence[ImageBuffer], target: Sequence[ImageBuffer], seed: int = 0) -> float:
    """Mean over view pairs of the Frechet distance between patch-feature Gaussians."""
    return float(np.mean(sifid_per_view(source, target, seed)))


def psnr(pred: ImageBuffer, gt: ImageBuffer) -> float:
    """10 log10(1 / mse) with peak 1, mse averaged over all pixels and channels.

    Identical images give ``EXACT`` (infinity).
    """
    if pred.rgb.shape != gt.rgb.shape:
        raise ValueError(f"image size mismatch: {pred.rgb.shape} vs {gt.rgb.shape}")
    mse = float(np.mean((np.asarray(pred.rgb, np.float64) - np.asarray(gt.rgb, np.float64)) ** 2))
    if mse == 0.0:
        return EXACT
    return 10.0 * math.log10(1.0 / mse)


def masked_psnr(pred: ImageBuffer, gt: ImageBuffer) -> float:
    """PSNR over surface pixels only (ground-truth mask)."""
    m = np.asarray(gt.mask, dtype=bool)
    if not m.any():
        raise EmptyRenderError("no surface pixels")
    mse = float(np.mean((pred.rgb[m] - gt.rgb[m]) ** 2))
    return EXACT if mse == 0.0 else 10.0 * math.log10(1.0 / mse)


def format_psnr(v: float):
    return "exact" if v == EXACT else v


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:16]


def write_report(path, metric: str, per_view: Sequence[float], aggregate: float, seeds: dict, config: dict,
                 extra: dict | None = None) -> dict:
    rep = {
        "metric": metric,
        "per_view": [format_psnr(v) for v in per_view],
        "aggregate": format_psnr(aggregate),
        "seeds": seeds,
        "config": config,
        "config_hash": config_hash(config),
    }
    if extra:
        rep.update(extra)
    Path(path).write_text(json.dumps(rep, indent=2, sort_keys=True))
    return rep
