"""Fitting the texture field to a single colored mesh."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np
from threadpoolctl import threadpool_limits

from .adam import AdamState, adam_step
from .checkpoint import save_checkpoint
from .features import FeatureSet
from .field_net import FieldNet, FieldNetConfig
from .geometry import Mesh, Transform3, apply_transform, build_bvh, rotation_from_euler
from .losses import LossConfig, total_loss
from .renderer import (Camera, DEFAULT_FOV, DEFAULT_RADIUS, cast_views, compose_image,
                       contact_sheet, fixed_viewpoints, hit_records, interpolate_colors, render_field_views,
                       render_gt_views, sample_cameras, write_png)
from .triplane import BilinearSampler, add_positional_encoding, encoded_channels, project_features

log = logging.getLogger(__name__)

FeatureSource = Callable[[Mesh, int], FeatureSet]


@dataclass
class TrainConfig:
    iterations: int = 500
    views_per_iter: int = 30
    render_res: int = 256
    triplane_res: int = 256
    lr_conv: float = 1e-2
    lr_mlp: float = 1e-3
    variant_count: int = 5
    variant_scale: tuple = (0.5, 1.7)
    variant_rotation: float = 15.0
    jitter: bool = True
    jitter_scale: tuple = (0.9, 1.1)
    jitter_rotation: float = 5.0
    jitter_translation: float = 0.1
    n_freqs: int = 4
    width: int = 64
    depth: int = 4
    hidden: int = 64
    seed: int = 0
    camera_radius: float = DEFAULT_RADIUS
    fov: float = DEFAULT_FOV
    checkpoint_every: int = 100
    preview_every: int = 100
    preview_views: int = 3

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.views_per_iter < 1 or self.variant_count < 1:
            raise ValueError("views_per_iter and variant_count must be >= 1")
        for name in ("variant_scale", "jitter_scale"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must satisfy 0 < low <= high")
            setattr(self, name, (float(lo), float(hi)))
        if self.variant_rotation < 0 or self.jitter_rotation < 0 or self.jitter_translation < 0:
            raise ValueError("rotation and translation ranges must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant_scale"] = list(self.variant_scale)
        d["jitter_scale"] = list(self.jitter_scale)
        return d


class Variant(NamedTuple):
    mesh: Mesh
    features: FeatureSet
    transform: Transform3


class TrainingDiverged(RuntimeError):
    pass


DOMAIN_HALF = 0.5


def fit_to_domain(mesh: Mesh, half: float = DOMAIN_HALF) -> Mesh:
    """Shrink uniformly about the origin until every vertex lies in [-half, half]^3."""
    r = float(np.abs(mesh.vertices).max())
    if r <= half:
        return mesh
    return mesh.with_vertices(mesh.vertices * (half / r))


def random_transform(rng: np.random.Generator, scale_range, rotation_deg: float,
                     translation: float = 0.0) -> Transform3:
    s = rng.uniform(scale_range[0], scale_range[1], size=3)
    angles = rng.uniform(-rotation_deg, rotation_deg, size=3)
    t = rng.uniform(-translation, translation, size=3)
    return Transform3(rotation_from_euler(angles), s, t)


def make_variants(mesh: Mesh, features_source: FeatureSource, cfg: TrainConfig) -> list[Variant]:
    """Identity plus ``variant_count - 1`` stretched/rotated, re-normalized copies."""
    from .geometry import normalize_mesh
    rng = np.random.default_rng([cfg.seed, 1])
    out = [Variant(mesh, features_source(mesh, 0), Transform3.identity())]
    for k in range(1, cfg.variant_count):
        t = random_transform(rng, cfg.variant_scale, cfg.variant_rotation)
        vm, _ = normalize_mesh(apply_transform(mesh, t))
        out.append(Variant(vm, features_source(vm, k), t))
    return out


@dataclass
class Batch:
    """One frozen training step: geometry, input triplane, camera hits and targets."""
    mesh: Mesh
    triplane_input: np.ndarray
    cams: list
    records: list
    gts: list
    points: np.ndarray
    sampler: BilinearSampler


def make_batch(mesh: Mesh, features: FeatureSet, cams: Sequence[Camera], triplane_res: int, n_freqs: int,
               dtype=np.float32) -> Batch:
    bvh = build_bvh(mesh)
    tri = add_positional_encoding(project_features(mesh, features, bvh, (triplane_res, triplane_res)), n_freqs)
    recs = [hit_records(h) for h in cast_views(mesh, bvh, cams)]
    gts = [compose_image(c, r, interpolate_colors(mesh, r)) for c, r in zip(cams, recs)]
    pts = np.concatenate([r.points for r in recs]) if recs else np.zeros((0, 3))
    sampler = BilinearSampler(pts, (triplane_res, triplane_res), dtype)
    return Batch(mesh, tri.planes.astype(dtype), list(cams), recs, gts, pts, sampler)


def loss_and_grads(net: FieldNet, batch: Batch, loss_cfg: LossConfig, with_grads: bool = True):
    """Total loss over the batch's views and gradients for every network parameter.

    Returns (loss, grads, parts, tapes).
    """
    processed, tape = net.forward(batch.triplane_input)
    feats = batch.sampler.forward(processed)
    rgb, ctape = net.color(feats)
    rgb64 = np.asarray(rgb, dtype=np.float64)
    preds, s = [], 0
    for cam, rec in zip(batch.cams, batch.records):
        e = s + len(rec.pixels)
        preds.append(compose_image(cam, rec, rgb64[s:e]))
        s = e
    loss, img_grads, parts = total_loss(preds, batch.gts, loss_cfg)
    if not with_grads:
        return loss, None, parts, (tape, ctape)
    grad_rgb = np.concatenate([g.reshape(-1, 3)[rec.pixels] for g, rec in zip(img_grads, batch.records)])
    mlp_grads, dfeat = net.color_backward(ctape, grad_rgb)
    conv_grads = net.backward(tape, batch.sampler.backward(dfeat))
    grads = {**conv_grads, **mlp_grads}
    return loss, {k: grads[k] for k in net.params}, parts, (tape, ctape)


@dataclass
class TrainResult:
    net: FieldNet
    log: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)


def build_net(cfg: TrainConfig, feature_dim: int, feature_seed: Optional[int] = None) -> FieldNet:
    ncfg = FieldNetConfig(in_channels=encoded_channels(feature_dim, cfg.n_freqs), width=cfg.width,
                          depth=cfg.depth, hidden=cfg.hidden, resolution=(cfg.triplane_res, cfg.triplane_res),
                          n_freqs=cfg.n_freqs, feature_dim=feature_dim, feature_seed=feature_seed)
    return FieldNet.init(ncfg, seed=cfg.seed)


def _check_source(mesh: Mesh):
    if not mesh.has_colors:
        raise ValueError("training mesh needs vertex colors")
    lo, hi = mesh.bounds()
    if np.abs(0.5 * (lo + hi)).max() > 1e-6 or abs(float(np.max(hi - lo)) - 1.0) > 1e-6:
        raise ValueError("training mesh must be normalized (centered, max extent 1)")


def preview_psnr(net: FieldNet, mesh: Mesh, features: FeatureSet, cfg: TrainConfig, cams=None):
    """Field renders vs ground truth on fixed cameras of the un-jittered source."""
    from .evaluation import psnr
    cams = cams or fixed_viewpoints(cfg.camera_radius, cfg.fov, (cfg.render_res, cfg.render_res))[:cfg.preview_views]
    bvh = build_bvh(mesh)
    processed = field_forward(net, mesh, features, bvh)
    preds = render_field_views(mesh, bvh, cams, processed, net)
    gts = render_gt_views(mesh, bvh, cams)
    vals = [psnr(p, g) for p, g in zip(preds, gts)]
    return float(np.mean(vals)), list(zip(gts, preds))


def field_forward(net: FieldNet, mesh: Mesh, features: FeatureSet, bvh=None):
    """Project features, add positional encoding and run the conv stack."""
    bvh = bvh or build_bvh(mesh)
    r = net.config.resolution
    tri = add_positional_encoding(project_features(mesh, features, bvh, tuple(r)), net.config.n_freqs)
    return net.forward(tri)[0]


def train(mesh: Mesh, features: Union[FeatureSet, FeatureSource], cfg: TrainConfig,
          loss_cfg: LossConfig = LossConfig(), out_dir=None, feature_seed: Optional[int] = None,
          progress: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Fit a FieldNet to one vertex-colored, normalized mesh.

    ``features`` is either the source's FeatureSet (only with a single
    variant) or a provider called as ``features(variant_mesh, k)``.
    """
    _check_source(mesh)
    if isinstance(features, FeatureSet):
        if cfg.variant_count != 1:
            raise ValueError("preprocessing variants need a feature provider, not a fixed FeatureSet")
        fixed = features
        source = lambda m, k: fixed  # noqa: E731
    else:
        source = features
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "previews").mkdir(exist_ok=True)
    with threadpool_limits(limits=1, user_api="blas"):
        return _train(mesh, source, cfg, loss_cfg, out, feature_seed, progress)


def _train(mesh, source, cfg, loss_cfg, out, feature_seed, progress):
    variants = make_variants(mesh, source, cfg)
    net = build_net(cfg, variants[0].features.dim, feature_seed)
    if any(v.features.dim != variants[0].features.dim for v in variants):
        raise ValueError("all variants must share one feature dimensionality")
    lrs = net.learning_rates(cfg.lr_conv, cfg.lr_mlp)
    state = AdamState()
    rng = np.random.default_rng([cfg.seed, 2])
    result = TrainResult(net)
    log_fh = open(out / "log.jsonl", "w") if out is not None else None
    last_ckpt = None
    t0 = time.perf_counter()
    res = (cfg.render_res, cfg.render_res)
    try:
        for it in range(1, cfg.iterations + 1):
            k = int(rng.integers(len(variants)))
            vmesh, vfeat = variants[k].mesh, variants[k].features
            if cfg.jitter:
                jt = random_transform(rng, cfg.jitter_scale, cfg.jitter_rotation, cfg.jitter_translation)
                vmesh = fit_to_domain(apply_transform(vmesh, jt))
            cams = sample_cameras(cfg.views_per_iter, int(rng.integers(2 ** 31)), cfg.camera_radius, cfg.fov, res)
            batch = make_batch(vmesh, vfeat, cams, cfg.triplane_res, cfg.n_freqs, net.dtype)
            loss, grads, parts, _ = loss_and_grads(net, batch, loss_cfg)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at iteration {it}; last checkpoint: {last_ckpt}")
            adam_step(net.params, grads, state, lrs)
            net.mark_updated()
            rec = {"iteration": it, "mse": parts["mse"], "app": parts["app"], "total": float(loss),
                   "variant": k, "wall_time": time.perf_counter() - t0}
            if out is not None and cfg.preview_every and (it % cfg.preview_every == 0 or it == cfg.iterations):
                rec["preview_psnr"], pairs = preview_psnr(net, mesh, variants[0].features, cfg)
                write_png(contact_sheet(pairs), out / "previews" / f"preview_{it:06d}.png")
            result.log.append(rec)
            if log_fh is not None:
                log_fh.write(json.dumps(rec) + "\n")
                log_fh.flush()
            if progress is not None:
                progress(rec)
            if out is not None and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
                last_ckpt = out / f"ckpt_{it:06d}.ttck"
                save_checkpoint(net, last_ckpt)
                result.checkpoints.append(last_ckpt)
        if out is not None:
            save_checkpoint(net, out / "final.ttck")
            result.checkpoints.append(out / "final.ttck")
    finally:
        if log_fh is not None:
            log_fh.close()
    return result
