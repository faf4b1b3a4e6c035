"""Per-vertex semantic descriptors: TRIF ingestion, a synthetic generator, PCA coloring.

TRIF layout (little-endian): b"TRIF", u32 version (=1), u32 n_vertices, u32 dim,
then n_vertices * dim float32 values in row-major vertex order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Mesh, normalize_mesh, vertex_normals

TRIF_MAGIC = b"TRIF"
TRIF_VERSION = 1
_HEADER = struct.Struct("<4sIII")


class FeatureError(ValueError):
    pass


class TrifFormatError(FeatureError):
    pass


class FeatureCountMismatch(FeatureError):
    pass


class NonFiniteFeatures(FeatureError):
    pass


@dataclass(frozen=True, eq=False)
class FeatureSet:
    values: np.ndarray  # (n_vertices, dim)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] < 1:
            raise FeatureError("feature values must be an (n_vertices, dim) matrix with dim >= 1")
        if not np.all(np.isfinite(v)):
            raise NonFiniteFeatures("feature values contain non-finite entries")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.values.shape[0]

    def check_mesh(self, mesh: Mesh) -> None:
        if self.n_vertices != mesh.n_vertices:
            raise FeatureCountMismatch(
                f"feature rows ({self.n_vertices}) != mesh vertices ({mesh.n_vertices})")


def write_trif(features: FeatureSet, path) -> None:
    vals = np.ascontiguousarray(features.values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TRIF_MAGIC, TRIF_VERSION, vals.shape[0], vals.shape[1]))
        fh.write(vals.tobytes())


def read_trif(path) -> FeatureSet:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"feature file not found: {path}")
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise TrifFormatError(f"{path}: truncated TRIF header")
    magic, version, n, dim = _HEADER.unpack_from(data)
    if magic != TRIF_MAGIC:
        raise TrifFormatError(f"{path}: bad magic {magic!r}, expected {TRIF_MAGIC!r}")
    if version != TRIF_VERSION:
        raise TrifFormatError(f"{path}: unsupported TRIF version {version}")
    if dim < 1:
        raise TrifFormatError(f"{path}: feature dimension must be positive")
    expected = _HEADER.size + 4 * n * dim
    if len(data) != expected:
        raise TrifFormatError(f"{path}: payload is {len(data) - _HEADER.size} bytes, expected {4 * n * dim}")
    vals = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(n, dim)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteFeatures(f"{path}: non-finite feature values")
    return FeatureSet(vals)


def load_features(path, mesh: Mesh) -> FeatureSet:
    path = Path(path)
    if path.is_file() and path.stat().st_size >= _HEADER.size:
        with open(path, "rb") as fh:
            magic, version, n, _ = _HEADER.unpack(fh.read(_HEADER.size))
        # report a count mismatch before reading the payload
        if magic == TRIF_MAGIC and version == TRIF_VERSION and n != mesh.n_vertices:
            raise FeatureCountMismatch(f"{path}: header has {n} vertices, mesh has {mesh.n_vertices}")
    fs = read_trif(path)
    fs.check_mesh(mesh)
    return fs


def synth_features(mesh: Mesh, dim: int = 16, seed: int = 0) -> FeatureSet:
    """Deterministic smooth descriptors computed from normalized geometry.

    Channels: normalized position (3), area-weighted unit normal (3), then
    ``dim - 6`` seeded random sinusoids of the normalized position.
    """
    if dim < 6:
        raise FeatureError("synthetic features need dim >= 6")
    norm_mesh, _ = normalize_mesh(mesh)
    p = norm_mesh.vertices
    n = vertex_normals(norm_mesh)
    rng = np.random.default_rng(seed)
    k = dim - 6
    freqs = rng.normal(scale=2.0 * np.pi, size=(3, k))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=k)
    waves = np.sin(p @ freqs + phase)
    return FeatureSet(np.concatenate([p, n, waves], axis=1))


def pca_rgb(features: FeatureSet) -> np.ndarray:
    """Top-3 principal components of the features, min-max scaled to [0, 1]."""
    x = features.values
    if x.shape[0] < 3 or x.shape[1] < 3:
        raise FeatureError("PCA coloring needs at least 3 vertices and 3 feature channels")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (len(x) - 1)
    evals, evecs = np.linalg.eigh(cov)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    out = np.full((len(x), 3), 0.5)
    top = max(evals[0], 0.0)
    for c in range(3):
        if top <= 0.0 or evals[c] <= 1e-12 * top:
            continue
        vec = evecs[:, c]
        vec = vec * np.sign(vec[np.argmax(np.abs(vec))])
        proj = xc @ vec
        lo, hi = proj.min(), proj.max()
        if hi > lo:
            out[:, c] = (proj - lo) / (hi - lo)
    return out


class SynthFeatureSource:
    """Feature provider for training variants backed by :func:`synth_features`.

    Descriptors are attached to vertices: by default a deformed variant
    carries the features computed on variant 0, the way semantic features are
    meant to be stable under deformation. ``per_variant=True`` recomputes them
    from each variant's own geometry instead.
    """

    def __init__(self, dim: int = 16, seed: int = 0, per_variant: bool = False):
        self.dim, self.seed, self.per_variant = dim, seed, per_variant
        self._base: FeatureSet | None = None

    def __call__(self, mesh: Mesh, variant: int = 0) -> FeatureSet:
        if self.per_variant or variant == 0:
            fs = synth_features(mesh, self.dim, self.seed)
            if variant == 0:
                self._base = fs
            return fs
        if self._base is None:
            raise FeatureError("variant 0 must be requested before deformed variants")
        self._base.check_mesh(mesh)
        return self._base


class TrifFeatureSource:
    """Loads externally extracted features as ``<directory>/variant_<k>.trif``."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def path(self, variant: int) -> Path:
        return self.directory / f"variant_{variant}.trif"

    def __call__(self, mesh: Mesh, variant: int = 0) -> FeatureSet:
        p = self.path(variant)
        if not p.is_file():
            raise FileNotFoundError(f"missing per-variant TRIF file: {p}")
        return load_features(p, mesh)
