"""Applying a trained field to new meshes, and the nearest-neighbour baseline."""
from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np

from .features import FeatureError, FeatureSet, synth_features
from .field_net import FieldNet
from .geometry import Mesh, MeshError, build_bvh, normalize_mesh, save_mesh
from .triplane import BilinearSampler, add_positional_encoding, project_features


class TransferError(ValueError):
    pass


def features_for(net: FieldNet, mesh: Mesh) -> FeatureSet:
    """Regenerate synthetic features with the settings recorded in the checkpoint."""
    cfg = net.config
    if cfg.feature_seed is None or cfg.feature_dim < 6:
        raise TransferError("checkpoint does not record synthetic-feature settings; pass features explicitly")
    return synth_features(mesh, cfg.feature_dim, cfg.feature_seed)


def transfer(net: FieldNet, mesh: Mesh, features: Optional[FeatureSet] = None, batch: int = 65536) -> np.ndarray:
    """Per-vertex RGB in [0, 1] for ``mesh``.

    The mesh is normalized internally; the returned colors follow the input
    vertex order. Only the target mesh is needed; the training mesh plays
    no part in inference.
    """
    if features is None:
        features = features_for(net, mesh)
    features.check_mesh(mesh)
    if features.dim != net.config.feature_dim and net.config.feature_dim:
        raise FeatureError(f"features have dim {features.dim}, checkpoint was trained with {net.config.feature_dim}")
    norm, _ = normalize_mesh(mesh)
    bvh = build_bvh(norm)
    tri = project_features(norm, features, bvh, tuple(net.config.resolution))
    tri = add_positional_encoding(tri, net.config.n_freqs)
    processed, _ = net.forward(tri)
    out = np.empty((mesh.n_vertices, 3))
    for s in range(0, mesh.n_vertices, batch):
        pts = norm.vertices[s:s + batch]
        feats = BilinearSampler(pts, processed.shape[1:3], processed.dtype).forward(processed)
        out[s:s + batch] = net.color(feats)[0]
    return out


def bake_and_export(mesh: Mesh, colors: np.ndarray, path) -> Mesh:
    """Attach per-vertex colors and write PLY or OBJ by extension."""
    if colors is None:
        raise MeshError("nothing to bake: no colors given")
    c = np.asarray(colors, dtype=np.float64)
    if c.shape != (mesh.n_vertices, 3):
        raise MeshError(f"expected ({mesh.n_vertices}, 3) colors, got {c.shape}")
    baked = mesh.with_colors(np.clip(c, 0.0, 1.0))
    save_mesh(baked, Path(path))
    return baked


def _unit_rows(x):
    n = np.linalg.norm(x, axis=1, keepdims=True)
    ok = n[:, 0] > 0
    out = np.zeros_like(x, dtype=np.float64)
    out[ok] = x[ok] / n[ok]
    return out, ok


def nn_match(source: np.ndarray, target: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Index of the source row with the highest cosine similarity, per target row.

    Zero-norm source rows never match; ties go to the lowest index.
    """
    src, ok = _unit_rows(np.asarray(source, dtype=np.float64))
    if not ok.any():
        raise FeatureError("every source feature vector has zero norm")
    tgt, _ = _unit_rows(np.asarray(target, dtype=np.float64))
    out = np.empty(len(tgt), dtype=np.int64)
    for s in range(0, len(tgt), chunk):
        sim = tgt[s:s + chunk] @ src.T
        sim[:, ~ok] = -np.inf
        out[s:s + chunk] = np.argmax(sim, axis=1)
    return out


def face_centroid_features(mesh: Mesh, features: FeatureSet) -> np.ndarray:
    return features.values[mesh.faces].mean(axis=1)


def nn_transfer(source: Mesh, source_features: FeatureSet, target: Mesh, target_features: FeatureSet,
                at: str = "vertex") -> np.ndarray:
    """Copy the color of the most similar source vertex.

    ``at="vertex"`` returns per-target-vertex colors; ``at="face"`` matches
    face-centroid features and returns per-target-face colors (source face
    colors are the mean of their corners).
    """
    if not source.has_colors:
        raise MeshError("nearest-neighbour transfer needs a colored source mesh")
    source_features.check_mesh(source)
    target_features.check_mesh(target)
    if source_features.dim != target_features.dim:
        raise FeatureError(f"feature dims differ: {source_features.dim} vs {target_features.dim}")
    if at == "vertex":
        idx = nn_match(source_features.values, target_features.values)
        return source.vertex_colors[idx].copy()
    if at == "face":
        idx = nn_match(face_centroid_features(source, source_features),
                       face_centroid_features(target, target_features))
        return source.vertex_colors[source.faces].mean(axis=1)[idx]
    raise ValueError(f"unknown matching mode {at!r}")
