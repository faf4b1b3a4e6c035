"""Desk-scale experiment protocols shared by the acceptance tests and scripts/."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .evaluation import psnr, sifid_surrogate
from .features import SynthFeatureSource, synth_features
from .geometry import Mesh, Transform3, apply_transform, build_bvh, normalize_mesh
from .losses import LossConfig
from .renderer import fixed_viewpoints, render_field_views, render_gt_views, sample_cameras
from .shapes import hemisphere_colors, icosphere, smooth_colors, stripe_colors
from .training import TrainConfig, field_forward, train
from .transfer import nn_transfer, transfer

FEATURE_DIM = 16
FEATURE_SEED = 0
STRETCH = 1.3


def desk_config(**overrides) -> TrainConfig:
    """64x64 triplane, 64x64 renders, 20 views per iteration, narrow network."""
    base = dict(iterations=300, views_per_iter=20, render_res=64, triplane_res=64, width=16, depth=1, hidden=64,
                variant_count=5, jitter=True, checkpoint_every=0, preview_every=0)
    base.update(overrides)
    return TrainConfig(**base)


def colored_sphere(kind: str, subdivisions: int = 3) -> Mesh:
    m, _ = normalize_mesh(icosphere(subdivisions))
    paint = {"smooth": smooth_colors, "hemisphere": hemisphere_colors, "stripes": stripe_colors}[kind]
    return m.with_colors(paint(m))


def stretched_sphere(subdivisions: int, stretch: float = STRETCH) -> Mesh:
    """Ellipsoid stretched along x, re-normalized."""
    t = Transform3(np.eye(3), np.array([stretch, 1.0, 1.0]), np.zeros(3))
    return normalize_mesh(apply_transform(icosphere(subdivisions), t))[0]


@dataclass
class Outcome:
    value: float
    seconds: float
    extra: dict = field(default_factory=dict)


def overfit(iterations: int = 300, seed: int = 0, held_out: int = 5) -> Outcome:
    """Self-reconstruction: train on a smoothly colored sphere, PSNR on unseen cameras."""
    mesh = colored_sphere("smooth")
    feats = synth_features(mesh, FEATURE_DIM, FEATURE_SEED)
    cfg = desk_config(iterations=iterations, variant_count=1, jitter=False, seed=seed)
    t0 = time.perf_counter()
    res = train(mesh, feats, cfg, feature_seed=FEATURE_SEED)
    secs = time.perf_counter() - t0
    cams = sample_cameras(held_out, seed=10_000 + seed, resolution=(64, 64))
    bvh = build_bvh(mesh)
    preds = render_field_views(mesh, bvh, cams, field_forward(res.net, mesh, feats, bvh), res.net)
    vals = [psnr(p, g) for p, g in zip(preds, render_gt_views(mesh, bvh, cams))]
    return Outcome(float(np.mean(vals)), secs, {"per_view": vals, "net": res.net})


def train_transfer_net(kind: str, delta_app: float = 0.1, seed: int = 0, **overrides):
    mesh = colored_sphere(kind)
    cfg = desk_config(seed=seed, **overrides)
    t0 = time.perf_counter()
    res = train(mesh, SynthFeatureSource(FEATURE_DIM, FEATURE_SEED), cfg, LossConfig(delta_app=delta_app),
                feature_seed=FEATURE_SEED)
    return mesh, res.net, time.perf_counter() - t0


def hemisphere_transfer(seed: int = 0) -> Outcome:
    """Fraction of ellipsoid vertices whose predicted color is nearer their hemisphere's color."""
    _, net, secs = train_transfer_net("hemisphere", seed=seed)
    tgt = stretched_sphere(3)
    pred = transfer(net, tgt)
    # stretching along x keeps the sign of the y normal, so the hemisphere of
    # each target vertex is that of its preimage on the sphere
    up = hemisphere_colors(tgt)[:, 0] > 0.5
    top, bottom = np.array([0.9, 0.15, 0.1]), np.array([0.1, 0.2, 0.9])
    says_up = np.linalg.norm(pred - top, axis=1) < np.linalg.norm(pred - bottom, axis=1)
    return Outcome(float(np.mean(says_up == up)), secs, {"net": net})


def stripe_sifid(mesh: Mesh, target: Mesh, colors: np.ndarray, res: int = 128) -> float:
    cams = fixed_viewpoints(resolution=(res, res))
    tm = target.with_colors(colors)
    return sifid_surrogate(render_gt_views(mesh, build_bvh(mesh), cams), render_gt_views(tm, build_bvh(tm), cams))


def stripe_transfer(delta_app: float = 0.1, seed: int = 0) -> Outcome:
    """Surrogate-SIFID of the field's and the nn baseline's transfer of a striped sphere."""
    mesh, net, secs = train_transfer_net("stripes", delta_app=delta_app, seed=seed)
    tgt = stretched_sphere(4)
    field_score = stripe_sifid(mesh, tgt, transfer(net, tgt))
    nn_cols = nn_transfer(mesh, synth_features(mesh, FEATURE_DIM, FEATURE_SEED), tgt,
                          synth_features(tgt, FEATURE_DIM, FEATURE_SEED))
    return Outcome(field_score, secs, {"nn": stripe_sifid(mesh, tgt, nn_cols), "net": net})


def inference_seconds(checkpoint, mesh: Mesh, repeats: int = 3) -> float:
    """Best-of wall time for load + synthetic features + transfer."""
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        net = load_checkpoint(checkpoint)
        transfer(net, mesh)
        best = min(best, time.perf_counter() - t0)
    return float(best)


def speed_checkpoints(out_dir, iterations: int = 3) -> list:
    """Default-width networks on a 64x64 triplane, trained briefly on two different sources."""
    cfg = replace(TrainConfig(), iterations=iterations, views_per_iter=4, render_res=32, triplane_res=64,
                  variant_count=1, jitter=False, checkpoint_every=0, preview_every=0)
    paths = []
    sources = (colored_sphere("smooth", 2), stretched_sphere(3, 2.0))
    sources = (sources[0], sources[1].with_colors(stripe_colors(sources[1])))
    for i, mesh in enumerate(sources):
        res = train(mesh, synth_features(mesh, FEATURE_DIM, FEATURE_SEED), cfg, feature_seed=FEATURE_SEED)
        p = f"{out_dir}/speed_{i}.ttck"
        save_checkpoint(res.net, p)
        paths.append(p)
    return paths
