"""The learnable texture field: triplane processing convs plus the coloring MLP.

Layout (every conv has one kernel per plane):

    reduce.0   1x1 conv  C_in -> width, leaky ReLU
    reduce.1   3x3 conv  width -> width, leaky ReLU
    trunk.i    triplane-aware residual block at `width` channels (depth of them)
    head       1x1 conv  width -> out_channels (12)
    mlp.0      linear    3 * out_channels -> hidden, leaky ReLU
    mlp.1      linear    hidden -> 3, sigmoid
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import layers as L
from .triplane import Triplane


class StaleTapeError(RuntimeError):
    pass


@dataclass
class FieldNetConfig:
    in_channels: int
    width: int = 64
    depth: int = 4
    hidden: int = 64
    out_channels: int = 12
    resolution: tuple = (256, 256)
    n_freqs: int = 4
    feature_dim: int = 0
    feature_seed: Optional[int] = None

    def to_json(self) -> str:
        d = asdict(self)
        d["resolution"] = list(self.resolution)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "FieldNetConfig":
        d = dict(d)
        d["resolution"] = tuple(d.get("resolution", (256, 256)))
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


CONV_GROUP = "conv"
MLP_GROUP = "mlp"
_GAIN = np.sqrt(2.0 / (1.0 + L.LEAK ** 2))


def _uniform(rng, shape, fan_in, gain, dtype):
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


@dataclass
class Tape:
    """Activations recorded by a forward pass, consumed by the matching backward."""
    net_id: int
    version: int
    data: dict = field(default_factory=dict)


class FieldNet:
    def __init__(self, config: FieldNetConfig, params: dict):
        self.config = config
        self.params = params
        self.version = 0

    @classmethod
    def init(cls, config: FieldNetConfig, seed: int = 0, dtype=np.float32) -> "FieldNet":
        rng = np.random.default_rng(seed)
        c, k, d = config.in_channels, config.width, config.out_channels
        p = {}

        def conv(name, ksize, cin, cout, gain=_GAIN):
            p[f"{name}.w"] = _uniform(rng, (3, ksize, ksize, cin, cout), ksize * ksize * cin, gain, dtype)
            p[f"{name}.b"] = np.zeros((3, cout), dtype=dtype)

        conv("reduce.0", 1, c, k)
        conv("reduce.1", 3, k, k)
        for i in range(config.depth):
            conv(f"trunk.{i}.conv1", 3, k, k)
            conv(f"trunk.{i}.conv2", 3, 3 * k, k, gain=1.0)
        conv("head", 1, k, d, gain=1.0)
        p["mlp.0.w"] = _uniform(rng, (3 * d, config.hidden), 3 * d, _GAIN, dtype)
        p["mlp.0.b"] = np.zeros(config.hidden, dtype=dtype)
        p["mlp.1.w"] = _uniform(rng, (config.hidden, 3), config.hidden, 1.0, dtype)
        p["mlp.1.b"] = np.zeros(3, dtype=dtype)
        return cls(config, p)

    @property
    def dtype(self):
        return self.params["head.w"].dtype

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    @staticmethod
    def group_of(name: str) -> str:
        return MLP_GROUP if name.startswith("mlp.") else CONV_GROUP

    def learning_rates(self, lr_conv: float, lr_mlp: float) -> dict:
        return {n: (lr_mlp if self.group_of(n) == MLP_GROUP else lr_conv) for n in self.params}

    def mark_updated(self) -> None:
        self.version += 1

    def _tape(self) -> Tape:
        return Tape(id(self), self.version)

    def _check(self, tape: Tape) -> None:
        if tape.net_id != id(self) or tape.version != self.version:
            raise StaleTapeError("tape was recorded with different parameters; rerun forward")

    # -- triplane processing -------------------------------------------------
    def forward(self, t) -> tuple[np.ndarray, Tape]:
        """(3, W, H, C_in) triplane -> processed (3, W, H, out_channels) planes."""
        x = t.planes if isinstance(t, Triplane) else np.asarray(t)
        if x.shape[-1] != self.config.in_channels:
            raise ValueError(f"triplane has {x.shape[-1]} channels, network expects {self.config.in_channels}")
        x = x.astype(self.dtype, copy=False)
        p = self.params
        tape = self._tape()
        a0, cols0 = L.conv_forward(x, p["reduce.0.w"], p["reduce.0.b"])
        h0 = L.leaky_relu(a0)
        a1, cols1 = L.conv_forward(h0, p["reduce.1.w"], p["reduce.1.b"])
        h = L.leaky_relu(a1)
        tape.data["reduce"] = (x.shape, cols0, a0, h0.shape, cols1, a1)
        blocks = []
        for i in range(self.config.depth):
            h, cache = L.triplane_block_forward(h, p[f"trunk.{i}.conv1.w"], p[f"trunk.{i}.conv1.b"],
                                                p[f"trunk.{i}.conv2.w"], p[f"trunk.{i}.conv2.b"])
            blocks.append(cache)
        tape.data["trunk"] = blocks
        out, cols_h = L.conv_forward(h, p["head.w"], p["head.b"])
        tape.data["head"] = (h.shape, cols_h)
        return out, tape

    def backward(self, tape: Tape, grad_out: np.ndarray) -> dict:
        """Parameter gradients of the conv stack given d(loss)/d(processed planes)."""
        self._check(tape)
        p = self.params
        grads = {}
        g = np.asarray(grad_out, dtype=self.dtype)
        h_shape, cols_h = tape.data["head"]
        g, grads["head.w"], grads["head.b"] = L.conv_backward(g, cols_h, h_shape, p["head.w"])
        for i in reversed(range(self.config.depth)):
            g, (dw1, db1, dw2, db2) = L.triplane_block_backward(
                g, tape.data["trunk"][i], p[f"trunk.{i}.conv1.w"], p[f"trunk.{i}.conv2.w"])
            grads[f"trunk.{i}.conv1.w"], grads[f"trunk.{i}.conv1.b"] = dw1, db1
            grads[f"trunk.{i}.conv2.w"], grads[f"trunk.{i}.conv2.b"] = dw2, db2
        x_shape, cols0, a0, h0_shape, cols1, a1 = tape.data["reduce"]
        g = L.leaky_relu_backward(g, a1)
        g, grads["reduce.1.w"], grads["reduce.1.b"] = L.conv_backward(g, cols1, h0_shape, p["reduce.1.w"])
        g = L.leaky_relu_backward(g, a0)
        _, grads["reduce.0.w"], grads["reduce.0.b"] = L.conv_backward(g, cols0, x_shape, p["reduce.0.w"])
        return grads

    # -- coloring MLP --------------------------------------------------------
    def color(self, feats: np.ndarray) -> tuple[np.ndarray, Tape]:
        """(N, 3 * out_channels) sampled features -> (N, 3) RGB in (0, 1)."""
        x = np.asarray(feats, dtype=self.dtype)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != 3 * self.config.out_channels:
            raise ValueError(f"coloring MLP expects {3 * self.config.out_channels} inputs, got {x.shape[1]}")
        p = self.params
        z0 = L.linear_forward(x, p["mlp.0.w"], p["mlp.0.b"])
        h = L.leaky_relu(z0)
        rgb = L.sigmoid(L.linear_forward(h, p["mlp.1.w"], p["mlp.1.b"]))
        tape = self._tape()
        tape.data["mlp"] = (x, z0, h, rgb)
        return (rgb[0] if single else rgb), tape

    def color_backward(self, tape: Tape, grad_rgb: np.ndarray) -> tuple[dict, np.ndarray]:
        """MLP parameter gradients and d(loss)/d(input features)."""
        self._check(tape)
        p = self.params
        x, z0, h, rgb = tape.data["mlp"]
        g = np.asarray(grad_rgb, dtype=self.dtype).reshape(rgb.shape) * rgb * (1 - rgb)
        grads = {}
        dh, grads["mlp.1.w"], grads["mlp.1.b"] = L.linear_backward(g, h, p["mlp.1.w"])
        dz0 = L.leaky_relu_backward(dh, z0)
        dx, grads["mlp.0.w"], grads["mlp.0.b"] = L.linear_backward(dz0, x, p["mlp.0.w"])
        return grads, dx

    def kink_signature(self, *tapes: Tape) -> np.ndarray:
        """Sign pattern of every leaky-ReLU pre-activation in the given tapes."""
        parts = []
        for tape in tapes:
            d = tape.data
            if "reduce" in d:
                parts += [d["reduce"][2] > 0, d["reduce"][5] > 0]
                parts += [c[2] > 0 for c in d["trunk"]]
            if "mlp" in d:
                parts.append(d["mlp"][1] > 0)
        return np.concatenate([q.ravel() for q in parts]) if parts else np.zeros(0, bool)


def forward(net: FieldNet, t):
    return net.forward(t)


def backward(net: FieldNet, tape: Tape, loss_grad):
    return net.backward(tape, loss_grad)


def color(net: FieldNet, sampled_feature):
    return net.color(sampled_feature)[0]
