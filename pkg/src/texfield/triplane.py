"""Triplane container, six-view orthographic feature projection, positional
encoding, and bilinear point sampling with its adjoint.

Planes are stored as one array of shape (3, W, H, C) in the order XY, XZ, YZ.
A point p in [-0.5, 0.5]^3 maps to plane coordinates (u, v) = (p[a] + 0.5, p[b] + 0.5)
where (a, b) are the plane's retained axes; texel i spans [i/W, (i+1)/W).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .features import FeatureSet
from .geometry import Bvh, Mesh, MeshError, intersect_rays

PLANE_AXES = ((0, 1), (0, 2), (1, 2))
PLANE_NAMES = ("xy", "xz", "yz")
ORTHO_AXIS = (2, 1, 0)


@dataclass(frozen=True, eq=False)
class Triplane:
    planes: np.ndarray  # (3, W, H, C)

    def __post_init__(self):
        p = np.asarray(self.planes)
        if p.ndim != 4 or p.shape[0] != 3:
            raise ValueError(f"triplane array must have shape (3, W, H, C), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("triplane contains non-finite values")
        object.__setattr__(self, "planes", p)

    @property
    def width(self) -> int:
        return self.planes.shape[1]

    @property
    def height(self) -> int:
        return self.planes.shape[2]

    @property
    def channels(self) -> int:
        return self.planes.shape[3]

    @property
    def resolution(self) -> tuple[int, int]:
        return self.width, self.height


def texel_centers(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def plane_coords(points: np.ndarray, plane: int) -> np.ndarray:
    """(N, 2) plane coordinates in [0, 1]^2; out-of-domain points are clamped."""
    a, b = PLANE_AXES[plane]
    return np.clip(np.asarray(points, dtype=np.float64)[:, (a, b)] + 0.5, 0.0, 1.0)


def projection_rays(plane: int, resolution: tuple[int, int], positive: bool, offset: float = 2.0):
    """Texel-center orthographic rays for one plane and view direction.

    ``positive`` means the view sits on the +axis side and looks toward -axis.
    Rays are ordered to match a (W, H) raster.
    """
    w, h = resolution
    a, b = PLANE_AXES[plane]
    c = ORTHO_AXIS[plane]
    uu, vv = np.meshgrid(texel_centers(w) - 0.5, texel_centers(h) - 0.5, indexing="ij")
    origins = np.zeros((w * h, 3))
    origins[:, a] = uu.ravel()
    origins[:, b] = vv.ravel()
    origins[:, c] = offset if positive else -offset
    dirs = np.zeros((w * h, 3))
    dirs[:, c] = -1.0 if positive else 1.0
    return origins, dirs


def project_features(mesh: Mesh, features: FeatureSet, bvh: Bvh, resolution=(256, 256),
                     return_mask: bool = False):
    """Splat per-vertex features onto three planes from six orthographic views.

    Each plane gets the front-most surface features seen from its +axis side,
    then from its -axis side, concatenated channel-wise (C = 2 * dim). Texels
    whose ray misses the mesh are zero.
    """
    if mesh.n_faces == 0:
        raise MeshError("cannot project features of an empty mesh")
    features.check_mesh(mesh)
    w, h = resolution
    d = features.dim
    offset = 1.0 + float(np.abs(mesh.vertices).max())
    origins, dirs = [], []
    for plane in range(3):
        for positive in (True, False):
            o, r = projection_rays(plane, (w, h), positive, offset)
            origins.append(o)
            dirs.append(r)
    hits = intersect_rays(bvh, mesh, np.concatenate(origins), np.concatenate(dirs))
    vals = np.zeros((len(hits), d))
    m = hits.mask
    if m.any():
        corner_feats = features.values[mesh.faces[hits.face[m]]]  # (n, 3, d)
        vals[m] = np.einsum("nk,nkd->nd", hits.bary[m], corner_feats)
    vals = vals.reshape(3, 2, w, h, d)
    planes = np.concatenate([vals[:, 0], vals[:, 1]], axis=-1)
    tri = Triplane(planes)
    if return_mask:
        return tri, m.reshape(3, 2, w, h)
    return tri


def positional_channels(resolution, n_freqs: int) -> np.ndarray:
    """(W, H, 2 + 4 * n_freqs): u, v, then sin/cos of 2^k*pi*u and 2^k*pi*v."""
    w, h = resolution
    uu, vv = np.meshgrid(texel_centers(w), texel_centers(h), indexing="ij")
    chans = [uu, vv]
    for k in range(n_freqs):
        f = (2.0 ** k) * np.pi
        chans += [np.sin(f * uu), np.cos(f * uu), np.sin(f * vv), np.cos(f * vv)]
    return np.stack(chans, axis=-1)


def add_positional_encoding(t: Triplane, n_freqs: int) -> Triplane:
    if n_freqs < 0:
        raise ValueError("n_freqs must be >= 0")
    pe = positional_channels(t.resolution, n_freqs).astype(t.planes.dtype)
    pe = np.broadcast_to(pe, (3,) + pe.shape)
    return Triplane(np.concatenate([t.planes, pe], axis=-1))


def encoded_channels(feature_dim: int, n_freqs: int) -> int:
    return 2 * feature_dim + 2 + 4 * n_freqs


class BilinearSampler:
    """Sparse bilinear interpolation operator for a fixed set of query points.

    ``forward`` and ``backward`` share one weight matrix per plane, so the
    backward pass is the exact adjoint of the forward pass.
    """

    def __init__(self, points: np.ndarray, resolution, dtype=np.float64):
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        w, h = resolution
        self.resolution = (w, h)
        self.n_points = len(pts)
        self.mats = []
        rows = np.repeat(np.arange(len(pts)), 4)
        for plane in range(3):
            uv = plane_coords(pts, plane)
            x = uv[:, 0] * w - 0.5
            y = uv[:, 1] * h - 0.5
            i0 = np.floor(x)
            j0 = np.floor(y)
            fx, fy = x - i0, y - j0
            i0 = i0.astype(np.int64)
            j0 = j0.astype(np.int64)
            i1 = np.clip(i0 + 1, 0, w - 1)
            j1 = np.clip(j0 + 1, 0, h - 1)
            i0 = np.clip(i0, 0, w - 1)
            j0 = np.clip(j0, 0, h - 1)
            cols = np.stack([i0 * h + j0, i1 * h + j0, i0 * h + j1, i1 * h + j1], axis=1).ravel()
            wts = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1).ravel()
            mat = sp.coo_matrix((wts.astype(dtype), (rows, cols)), shape=(len(pts), w * h)).tocsr()
            self.mats.append(mat)

    def forward(self, planes: np.ndarray) -> np.ndarray:
        """(3, W, H, C) -> (N, 3C), concatenated XY, XZ, YZ."""
        _, w, h, c = planes.shape
        if (w, h) != self.resolution:
            raise ValueError("sampler resolution does not match triplane")
        return np.concatenate([self.mats[p] @ planes[p].reshape(w * h, c) for p in range(3)], axis=1)

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        """(N, 3C) -> (3, W, H, C) gradient with respect to the plane texels."""
        w, h = self.resolution
        g = np.asarray(upstream)
        c = g.shape[1] // 3
        out = np.stack([self.mats[p].T @ g[:, p * c:(p + 1) * c] for p in range(3)])
        return out.reshape(3, w, h, c)


def sample(t: Triplane, points) -> np.ndarray:
    """Bilinear triplane features at 3D points; (N, 3C), or (3C,) for a single point."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    out = BilinearSampler(pts.reshape(-1, 3), t.resolution, t.planes.dtype).forward(t.planes)
    return out[0] if single else out


def sample_backward(t: Triplane, points, upstream_grad) -> np.ndarray:
    """Gradient of <upstream_grad, sample(t, points)> with respect to the texels."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    g = np.asarray(upstream_grad).reshape(len(pts), -1)
    if g.shape[1] != 3 * t.channels:
        raise ValueError(f"upstream gradient needs {3 * t.channels} columns")
    return BilinearSampler(pts, t.resolution, t.planes.dtype).backward(g)
