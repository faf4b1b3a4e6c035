"""Central finite-difference checks of the analytic gradients.

Error metric per tensor: max |analytic - numeric| / max(|analytic|_inf, |numeric|_inf, 1e-7).
Entries whose leaky-ReLU sign pattern differs between the +h and -h
evaluations straddle a kink, where finite differences are meaningless; they
are skipped and counted.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import layers as L
from .features import synth_features
from .field_net import FieldNet, FieldNetConfig
from .losses import LossConfig
from .renderer import sample_cameras
from .shapes import icosphere, smooth_colors
from .triplane import BilinearSampler, encoded_channels

STEP = 1e-4
FLOOR = 1e-7

TOLERANCES = {
    "mlp-only": 1e-5,
    "conv-block": 1e-4,
    "sample-path": 1e-4,
    "end-to-end-tiny": 1e-3,
}
SCENARIOS = tuple(TOLERANCES)

# loss_fn(params) -> (loss, kink signature or None)
LossFn = Callable[[dict], tuple]


@dataclass
class TensorReport:
    name: str
    max_rel_err: float
    checked: int
    skipped: int
    passed: bool
    note: str = ""


@dataclass
class GradReport:
    scenario: str
    tolerance: float
    tensors: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.tensors) and all(t.passed for t in self.tensors)

    @property
    def max_rel_err(self) -> float:
        return max((t.max_rel_err for t in self.tensors), default=float("nan"))

    def format(self) -> str:
        head = f"{self.scenario}: {'PASS' if self.passed else 'FAIL'} max_rel_err={self.max_rel_err:.3e} " \
               f"tol={self.tolerance:.0e} ({self.seconds:.1f}s)"
        lines = [head]
        for t in self.tensors:
            extra = f" skipped={t.skipped}" if t.skipped else ""
            note = f" [{t.note}]" if t.note else ""
            lines.append(f"  {t.name:<22} {t.max_rel_err:.3e} checked={t.checked}{extra}"
                         f" {'ok' if t.passed else 'FAIL'}{note}")
        return "\n".join(lines)


def _sig_equal(a, b) -> bool:
    if a is None or b is None:
        return True
    return a.shape == b.shape and bool(np.array_equal(a, b))


def check_gradients(loss_fn: LossFn, params: dict, analytic: dict, tolerance: float, scenario: str = "custom",
                    step: float = STEP, names=None) -> GradReport:
    """Compare ``analytic`` against central differences of ``loss_fn`` over ``params``.

    Parameters are perturbed in place and restored.
    """
    t0 = time.perf_counter()
    rep = GradReport(scenario, tolerance)
    for name in names or list(params):
        p = params[name]
        a = np.asarray(analytic[name], dtype=np.float64)
        if a.shape != p.shape:
            rep.tensors.append(TensorReport(name, float("inf"), 0, 0, False, f"shape {a.shape} != {p.shape}"))
            continue
        bad = np.argwhere(~np.isfinite(a))
        if len(bad):
            rep.tensors.append(TensorReport(name, float("inf"), 0, 0, False,
                                            f"non-finite analytic gradient at {tuple(int(i) for i in bad[0])}"))
            continue
        num = np.zeros_like(a)
        keep = np.ones(a.shape, dtype=bool)
        flat, nflat, kflat = p.reshape(-1), num.reshape(-1), keep.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            fp, sp = loss_fn(params)
            flat[i] = old - step
            fm, sm = loss_fn(params)
            flat[i] = old
            if not _sig_equal(sp, sm):
                kflat[i] = False
                continue
            nflat[i] = (fp - fm) / (2.0 * step)
        skipped = int((~keep).sum())
        if not keep.any():
            rep.tensors.append(TensorReport(name, float("nan"), 0, skipped, False, "every entry straddles a kink"))
            continue
        ak, nk = a[keep], num[keep]
        if not np.all(np.isfinite(nk)):
            rep.tensors.append(TensorReport(name, float("inf"), int(keep.sum()), skipped, False,
                                            "non-finite numeric gradient"))
            continue
        scale = max(float(np.abs(ak).max()), float(np.abs(nk).max()), FLOOR)
        err = float(np.abs(ak - nk).max()) / scale
        rep.tensors.append(TensorReport(name, err, int(keep.sum()), skipped, err <= tolerance))
    rep.seconds = time.perf_counter() - t0
    return rep


# -- scenarios -----------------------------------------------------------------

def _tiny_net(in_channels, seed, width=4, depth=1, hidden=8, res=8, perturb_bias=True):
    cfg = FieldNetConfig(in_channels=in_channels, width=width, depth=depth, hidden=hidden, resolution=(res, res))
    net = FieldNet.init(cfg, seed=seed, dtype=np.float64)
    if perturb_bias:
        # zero biases would hide bias-gradient bugs behind symmetric activations
        rng = np.random.default_rng(seed + 100)
        for k, v in net.params.items():
            if k.endswith(".b"):
                v[...] = rng.normal(scale=0.1, size=v.shape)
    return net


def _mlp_only(seed):
    net = _tiny_net(4, seed)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(24, 3 * net.config.out_channels))
    target = rng.uniform(size=(24, 3))
    params = {k: v for k, v in net.params.items() if k.startswith("mlp.")}

    def loss_fn(_):
        net.mark_updated()
        rgb, tape = net.color(x)
        return float(np.sum((rgb - target) ** 2) / len(x)), net.kink_signature(tape)

    net.mark_updated()
    rgb, tape = net.color(x)
    grads, _ = net.color_backward(tape, 2.0 * (rgb - target) / len(x))
    return loss_fn, params, grads


def _conv_block(seed):
    rng = np.random.default_rng(seed)
    k, w = 3, 5
    p = {
        "input": rng.normal(size=(3, w, w, k)),
        "conv1.w": rng.normal(scale=0.4, size=(3, 3, 3, k, k)),
        "conv1.b": rng.normal(scale=0.1, size=(3, k)),
        "conv2.w": rng.normal(scale=0.3, size=(3, 3, 3, 3 * k, k)),
        "conv2.b": rng.normal(scale=0.1, size=(3, k)),
    }
    r = rng.normal(size=(3, w, w, k))

    def run():
        out, cache = L.triplane_block_forward(p["input"], p["conv1.w"], p["conv1.b"], p["conv2.w"], p["conv2.b"])
        return out, cache

    def loss_fn(_):
        out, cache = run()
        return float(np.sum(out * r) + 0.5 * np.sum(np.tanh(out) ** 2)), cache[2] > 0

    out, cache = run()
    dy = r + np.tanh(out) * (1.0 - np.tanh(out) ** 2)
    dx, (dw1, db1, dw2, db2) = L.triplane_block_backward(dy, cache, p["conv1.w"], p["conv2.w"])
    grads = {"input": dx, "conv1.w": dw1, "conv1.b": db1, "conv2.w": dw2, "conv2.b": db2}
    return loss_fn, p, grads


def _sample_path(seed):
    rng = np.random.default_rng(seed)
    res, c = 7, 3
    p = {"planes": rng.normal(size=(3, res, res, c))}
    # a few points outside the domain exercise edge clamping
    pts = rng.uniform(-0.6, 0.6, size=(40, 3))
    target = rng.normal(size=(40, 3 * c))
    sampler = BilinearSampler(pts, (res, res), np.float64)

    def loss_fn(_):
        f = sampler.forward(p["planes"])
        return float(np.sum(np.sin(f) * target)), None

    f = sampler.forward(p["planes"])
    return loss_fn, p, {"planes": sampler.backward(np.cos(f) * target)}


def _end_to_end(seed):
    from .training import loss_and_grads, make_batch
    from .geometry import normalize_mesh
    mesh, _ = normalize_mesh(icosphere(1))
    mesh = mesh.with_colors(smooth_colors(mesh))
    feats = synth_features(mesh, dim=6, seed=seed)
    n_freqs, res = 1, 8
    net = _tiny_net(encoded_channels(feats.dim, n_freqs), seed, width=3, hidden=6, res=res)
    cams = sample_cameras(2, seed=seed, resolution=(8, 8))
    batch = make_batch(mesh, feats, cams, res, n_freqs, np.float64)
    loss_cfg = LossConfig(delta_app=0.1, channels=(4, 4), scales=2)

    def loss_fn(_):
        net.mark_updated()
        loss, _, _, tapes = loss_and_grads(net, batch, loss_cfg, with_grads=False)
        return loss, net.kink_signature(*tapes)

    net.mark_updated()
    _, grads, _, _ = loss_and_grads(net, batch, loss_cfg)
    return loss_fn, net.params, grads


_BUILDERS = {
    "mlp-only": _mlp_only,
    "conv-block": _conv_block,
    "sample-path": _sample_path,
    "end-to-end-tiny": _end_to_end,
}


def run_scenario(name: str, tolerance: Optional[float] = None, seed: int = 0,
                 corrupt: Optional[Callable[[dict], None]] = None) -> GradReport:
    """Run one named scenario. ``corrupt`` may edit the analytic gradients
    in place before comparison (used to test the checker itself)."""
    if name not in _BUILDERS:
        raise ValueError(f"unknown gradcheck scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    loss_fn, params, grads = _BUILDERS[name](seed)
    grads = {k: np.array(v, dtype=np.float64) for k, v in grads.items()}
    if corrupt is not None:
        corrupt(grads)
    tol = TOLERANCES[name] if tolerance is None else tolerance
    return check_gradients(loss_fn, params, grads, tol, scenario=name)


def run_all(seed: int = 0) -> list[GradReport]:
    return [run_scenario(n, seed=seed) for n in SCENARIOS]
