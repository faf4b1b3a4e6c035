"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Option precedence: built-in defaults < ``--config`` JSON file < flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import geometry
from .features import (FeatureError, SynthFeatureSource, TrifFeatureSource, load_features, pca_rgb,
                       synth_features, write_trif)
from .geometry import MeshError, build_bvh, load_mesh, normalize_mesh, save_mesh

log = logging.getLogger("texfield")

USAGE_ERRORS = (ValueError, FileNotFoundError, KeyError, MeshError, FeatureError)

# flag name -> TrainConfig / LossConfig field
TRAIN_FLAGS = {
    "iters": "iterations", "views": "views_per_iter", "res": "render_res", "triplane_res": "triplane_res",
    "lr_conv": "lr_conv", "lr_mlp": "lr_mlp", "variants": "variant_count", "width": "width", "depth": "depth",
    "hidden": "hidden", "n_freqs": "n_freqs", "seed": "seed", "checkpoint_every": "checkpoint_every",
    "preview_every": "preview_every",
}


ECHO_EXTRAS = ("feature_dim", "feature_seed", "per_variant_features")


class UsageError(Exception):
    pass


def _load_input_mesh(path):
    if path is None:
        raise UsageError("a mesh path is required")
    return load_mesh(path)


def _threads(args):
    if getattr(args, "threads", None):
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        geometry.set_num_threads(args.threads)


def _merge_config(args) -> tuple[dict, dict]:
    from .losses import LossConfig
    from .training import TrainConfig
    train_keys = {f.name for f in fields(TrainConfig)}
    loss_keys = {f.name for f in fields(LossConfig)}
    tc, lc = {}, {}
    if args.config:
        data = json.loads(Path(args.config).read_text())
        if "train" in data and isinstance(data["train"], dict):
            # a config.json echo written by a previous run
            data = {**data["train"], **data.get("loss", {}),
                    **{k: data[k] for k in ECHO_EXTRAS if data.get(k) is not None}}
        unknown = set(data) - train_keys - loss_keys - set(ECHO_EXTRAS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for k, v in data.items():
            (lc if k in loss_keys else tc)[k] = v
    for flag, key in TRAIN_FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            tc[key] = v
    if args.no_jitter:
        tc["jitter"] = False
    if args.delta_app is not None:
        lc["delta_app"] = args.delta_app
    for k in ("feature_dim", "feature_seed"):
        if getattr(args, k) is not None:
            tc[k] = getattr(args, k)
    if args.per_variant_features:
        tc["per_variant_features"] = True
    return tc, lc


def cmd_train(args) -> int:
    from .losses import LossConfig
    from .training import TrainConfig, train
    _threads(args)
    tc, lc = _merge_config(args)
    feature_dim = int(tc.pop("feature_dim", 16))
    feature_seed = int(tc.pop("feature_seed", 0))
    per_variant = bool(tc.pop("per_variant_features", False))
    for k in ("variant_scale", "jitter_scale"):
        if k in tc:
            tc[k] = tuple(tc[k])
    if "channels" in lc:
        lc["channels"] = tuple(lc["channels"])
    cfg, loss_cfg = TrainConfig(**tc), LossConfig(**lc)
    mesh = _load_input_mesh(args.mesh)
    if not mesh.has_colors:
        raise UsageError(f"{args.mesh}: training mesh has no vertex colors")
    mesh, _ = normalize_mesh(mesh)
    if args.synth_features == bool(args.features):
        raise UsageError("give exactly one of --synth-features or --features")
    if args.synth_features:
        source, seed_rec = SynthFeatureSource(feature_dim, feature_seed, per_variant), feature_seed
    else:
        fp = Path(args.features)
        if fp.is_dir():
            source = TrifFeatureSource(fp)
        elif fp.is_file():
            if cfg.variant_count != 1:
                raise UsageError("a single TRIF file supports only --variants 1; pass a directory of "
                                 "variant_<k>.trif files otherwise")
            fixed = load_features(fp, mesh)
            source = lambda m, k: fixed  # noqa: E731
        else:
            raise FileNotFoundError(f"features not found: {fp}")
        seed_rec = None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = {"train": cfg.to_dict(), "loss": {k: (list(v) if isinstance(v, tuple) else v)
                                             for k, v in loss_cfg.__dict__.items()},
            "mesh": str(args.mesh), "synth_features": bool(args.synth_features),
            "features": args.features, "feature_dim": feature_dim, "feature_seed": feature_seed,
            "per_variant_features": per_variant}
    (out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True))

    def progress(rec):
        if args.verbose or rec["iteration"] % max(1, cfg.iterations // 10) == 0:
            log.info("iter %d  total %.5f  mse %.5f  app %.5f", rec["iteration"], rec["total"], rec["mse"], rec["app"])

    res = train(mesh, source, cfg, loss_cfg, out_dir=out, feature_seed=seed_rec, progress=progress)
    print(f"wrote {res.checkpoints[-1]}")
    return 0


def _target_features(args, net, mesh):
    if args.features:
        return load_features(args.features, mesh)
    if args.synth_features or net is None:
        dim = net.config.feature_dim if net is not None and net.config.feature_dim else args.feature_dim
        seed = net.config.feature_seed if net is not None and net.config.feature_seed is not None else args.feature_seed
        return synth_features(mesh, dim, seed)
    raise UsageError("give --features or --synth-features")


def cmd_transfer(args) -> int:
    from .checkpoint import load_checkpoint
    from .evaluation import EXACT, psnr, write_report
    from .renderer import render_field_views, render_gt_views, turntable, write_png
    from .training import field_forward
    from .transfer import bake_and_export, nn_transfer, transfer
    _threads(args)
    target = _load_input_mesh(args.mesh)
    out = Path(args.out)
    t0 = time.perf_counter()
    report = {"mesh": str(args.mesh), "n_vertices": target.n_vertices}
    if args.baseline == "nn":
        if not args.source:
            raise UsageError("--baseline nn needs --source (the colored training mesh)")
        src = load_mesh(args.source)
        sf = load_features(args.source_features, src) if args.source_features else \
            synth_features(src, args.feature_dim, args.feature_seed)
        tf = load_features(args.features, target) if args.features else \
            synth_features(target, sf.dim, args.feature_seed)
        colors = nn_transfer(src, sf, target, tf)
        net = None
    else:
        if not args.checkpoint:
            raise UsageError("--checkpoint is required unless --baseline nn")
        net = load_checkpoint(args.checkpoint)
        tf = _target_features(args, net, target)
        if net.config.feature_dim and tf.dim != net.config.feature_dim:
            raise UsageError(f"feature dimension mismatch: target features have {tf.dim} channels, "
                             f"checkpoint expects {net.config.feature_dim} "
                             f"(in_channels {net.config.in_channels} = 2*{net.config.feature_dim} + PE)")
        colors = transfer(net, target, tf)
    report["transfer_seconds"] = time.perf_counter() - t0
    report["baseline"] = args.baseline or "field"
    baked = bake_and_export(target, colors, out)
    print(f"wrote {out}")
    if args.turntable:
        rdir = Path(args.render_dir) if args.render_dir else out.parent / (out.stem + "_renders")
        rdir.mkdir(parents=True, exist_ok=True)
        norm, _ = normalize_mesh(baked)
        bvh = build_bvh(norm)
        cams = turntable(args.turntable, resolution=(args.res, args.res))
        if net is not None:
            imgs = render_field_views(norm, bvh, cams, field_forward(net, norm, tf, bvh), net)
        else:
            imgs = render_gt_views(norm, bvh, cams)
        for i, im in enumerate(imgs):
            write_png(im, rdir / f"view_{i:03d}.png")
        if target.has_colors:
            # the target came with colors (e.g. self-transfer): score renders against them
            gts = render_gt_views(normalize_mesh(target)[0], bvh, cams)
            vals = [psnr(a, b) for a, b in zip(imgs, gts)]
            finite = [v for v in vals if v != EXACT]
            agg = float(np.mean(finite)) if finite else EXACT
            report["psnr_per_view"] = ["exact" if v == EXACT else v for v in vals]
            report["psnr"] = "exact" if agg == EXACT else agg
            print(f"turntable PSNR vs input colors: {report['psnr']}")
    if args.report:
        write_report(args.report, "transfer", report.get("psnr_per_view", []), report.get("psnr", float("nan")),
                     {"feature_seed": args.feature_seed}, {k: v for k, v in vars(args).items() if k != "func"},
                     extra=report)
    return 0


def cmd_eval(args) -> int:
    from .evaluation import EXACT, psnr, sifid_per_view, write_report
    from .renderer import fixed_viewpoints, render_gt_views
    _threads(args)
    if not args.source or not args.target:
        raise UsageError("eval needs both --source and --target meshes")
    imgs = []
    for p in (args.source, args.target):
        m = load_mesh(p)
        if not m.has_colors:
            raise UsageError(f"{p}: mesh has no vertex colors")
        m, _ = normalize_mesh(m)
        imgs.append(render_gt_views(m, build_bvh(m), fixed_viewpoints(resolution=(args.res, args.res))))
    sif = sifid_per_view(imgs[0], imgs[1], seed=args.seed)
    ps = [psnr(a, b) for a, b in zip(*imgs)]
    finite = [v for v in ps if v != EXACT]
    cfg = {"source": args.source, "target": args.target, "res": args.res, "views": len(sif)}
    rep = write_report(args.report, "surrogate-SIFID", sif, float(np.mean(sif)), {"extractor": args.seed}, cfg,
                       extra={"psnr_per_view": ["exact" if v == EXACT else v for v in ps],
                              "psnr": float(np.mean(finite)) if finite else "exact"})
    print(f"surrogate-SIFID {rep['aggregate']:.6g}  PSNR {rep['psnr']}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import SCENARIOS, run_scenario
    names = SCENARIOS if args.scenario == "all" else (args.scenario,)
    for n in names:
        if n not in SCENARIOS:
            raise UsageError(f"unknown scenario {n!r}; valid: {', '.join(SCENARIOS)}, all")
    ok = True
    t0 = time.perf_counter()
    for n in names:
        rep = run_scenario(n, seed=args.seed)
        print(rep.format())
        ok &= rep.passed
    print(f"total {time.perf_counter() - t0:.1f}s")
    return 0 if ok else 1


def cmd_synth_features(args) -> int:
    mesh = _load_input_mesh(args.mesh)
    fs = synth_features(mesh, args.dim, args.seed)
    write_trif(fs, args.out)
    print(f"wrote {args.out} ({fs.n_vertices} x {fs.dim})")
    if args.pca:
        save_mesh(mesh.with_colors(pca_rgb(fs)), args.pca)
        print(f"wrote {args.pca}")
    return 0


def cmd_render(args) -> int:
    from .renderer import fixed_viewpoints, render_gt_views, turntable, write_png, write_ppm
    _threads(args)
    mesh = _load_input_mesh(args.mesh)
    if not mesh.has_colors:
        raise UsageError(f"{args.mesh}: mesh has no vertex colors")
    mesh, _ = normalize_mesh(mesh)
    cams = fixed_viewpoints(resolution=(args.res, args.res)) if args.views == 0 else \
        turntable(args.views, resolution=(args.res, args.res))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    writer = write_png if args.format == "png" else write_ppm
    for i, im in enumerate(render_gt_views(mesh, build_bvh(mesh), cams)):
        writer(im, out / f"view_{i:03d}.{args.format}")
    print(f"wrote {len(cams)} views to {out}")
    return 0


def cmd_shape(args) -> int:
    from . import shapes
    from .geometry import Transform3, apply_transform
    if args.kind == "sphere":
        mesh = shapes.icosphere(args.subdivisions)
    elif args.kind == "box":
        mesh = shapes.box()
    else:
        mesh = shapes.grid_plane(2 ** args.subdivisions)
    if args.stretch:
        mesh = apply_transform(mesh, Transform3(np.eye(3), np.asarray(args.stretch, float), np.zeros(3)))
    mesh, _ = normalize_mesh(mesh)
    color = {"hemisphere": shapes.hemisphere_colors, "stripes": shapes.stripe_colors,
             "smooth": shapes.smooth_colors, "none": None}[args.coloring]
    if color is not None:
        mesh = mesh.with_colors(color(mesh))
    save_mesh(mesh, args.out)
    print(f"wrote {args.out} ({mesh.n_vertices} vertices)")
    return 0


def cmd_variants(args) -> int:
    from .training import TrainConfig, make_variants
    mesh, _ = normalize_mesh(_load_input_mesh(args.mesh))
    cfg = TrainConfig(variant_count=args.count, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # features are irrelevant here; only the geometry is exported for external extraction
    dummy = lambda m, k: None  # noqa: E731
    for k, v in enumerate(make_variants(mesh, dummy, cfg)):
        save_mesh(v.mesh, out / f"variant_{k}.ply")
    print(f"wrote {args.count} variant meshes to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="texfield", description="Triplane texture field: train, transfer, evaluate.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit a texture field to one colored mesh")
    t.add_argument("--mesh", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--synth-features", action="store_true", help="use built-in synthetic descriptors")
    t.add_argument("--features", help="TRIF file, or directory of variant_<k>.trif files")
    t.add_argument("--feature-dim", type=int)
    t.add_argument("--feature-seed", type=int)
    t.add_argument("--per-variant-features", action="store_true",
                   help="recompute synthetic features on every variant instead of carrying the source's")
    t.add_argument("--config", help="JSON file with TrainConfig/LossConfig fields")
    t.add_argument("--iters", type=int)
    t.add_argument("--views", type=int)
    t.add_argument("--res", type=int, help="render resolution")
    t.add_argument("--triplane-res", type=int)
    t.add_argument("--lr-conv", type=float)
    t.add_argument("--lr-mlp", type=float)
    t.add_argument("--variants", type=int)
    t.add_argument("--width", type=int)
    t.add_argument("--depth", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--n-freqs", type=int)
    t.add_argument("--delta-app", type=float)
    t.add_argument("--no-jitter", action="store_true")
    t.add_argument("--seed", type=int)
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--preview-every", type=int)
    t.add_argument("--threads", type=int, default=1)
    t.set_defaults(func=cmd_train)

    x = sub.add_parser("transfer", help="color a new mesh with a trained field")
    x.add_argument("--mesh", required=True)
    x.add_argument("--out", required=True, help="output .ply or .obj")
    x.add_argument("--checkpoint")
    x.add_argument("--features", help="target TRIF file")
    x.add_argument("--synth-features", action="store_true")
    x.add_argument("--feature-dim", type=int, default=16)
    x.add_argument("--feature-seed", type=int, default=0)
    x.add_argument("--baseline", choices=["nn"])
    x.add_argument("--source", help="colored source mesh (nn baseline)")
    x.add_argument("--source-features")
    x.add_argument("--turntable", type=int, default=0, help="number of equatorial views to render")
    x.add_argument("--render-dir")
    x.add_argument("--res", type=int, default=128)
    x.add_argument("--report")
    x.add_argument("--threads", type=int, default=1)
    x.set_defaults(func=cmd_transfer)

    e = sub.add_parser("eval", help="surrogate-SIFID and PSNR between two colored meshes")
    e.add_argument("--source")
    e.add_argument("--target")
    e.add_argument("--report", default="report.json")
    e.add_argument("--res", type=int, default=128)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--threads", type=int, default=1)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    g.add_argument("--scenario", default="all")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth-features", help="write synthetic per-vertex features as TRIF")
    s.add_argument("--mesh", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dim", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pca", help="also write the mesh colored by the top-3 PCA components")
    s.set_defaults(func=cmd_synth_features)

    r = sub.add_parser("render", help="render a colored mesh")
    r.add_argument("--mesh", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--views", type=int, default=0, help="turntable views; 0 = the 10 fixed viewpoints")
    r.add_argument("--res", type=int, default=128)
    r.add_argument("--format", choices=["png", "ppm"], default="png")
    r.add_argument("--threads", type=int, default=1)
    r.set_defaults(func=cmd_render)

    h = sub.add_parser("shape", help="write a procedural test mesh")
    h.add_argument("kind", choices=["sphere", "box", "plane"])
    h.add_argument("--out", required=True)
    h.add_argument("--subdivisions", type=int, default=3)
    h.add_argument("--stretch", type=float, nargs=3)
    h.add_argument("--coloring", choices=["hemisphere", "stripes", "smooth", "none"], default="smooth")
    h.set_defaults(func=cmd_shape)

    v = sub.add_parser("variants", help="export the preprocessing variant meshes")
    v.add_argument("--mesh", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--count", type=int, default=5)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_variants)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except USAGE_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
