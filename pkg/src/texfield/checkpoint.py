"""Binary checkpoint format for FieldNet.

    b"TTCK" | u32 version | u32 len | config JSON (utf-8, sorted keys)
    | u32 n_tensors | per tensor: u16 len, name, u32 rank, u32 dims..., float32 LE data
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .field_net import FieldNet, FieldNetConfig

MAGIC = b"TTCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(net: FieldNet) -> bytes:
    cfg = net.config.to_json().encode("utf-8")
    out = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg, struct.pack("<I", len(net.params))]
    for name, arr in net.params.items():
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def save_checkpoint(net: FieldNet, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(net))


def parse_checkpoint(data: bytes) -> FieldNet:
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError("bad checkpoint header")
    version, clen = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    try:
        cfg = FieldNetConfig.from_dict(json.loads(data[pos:pos + clen].decode("utf-8")))
        pos += clen
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        params = {}
        for _ in range(n):
            (ln,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + ln].decode("utf-8")
            pos += ln
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            size = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape)
            pos += 4 * size
            params[name] = arr.astype(np.float32)
    except (struct.error, ValueError, UnicodeDecodeError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None
    if pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    expected = FieldNet.init(cfg, seed=0)
    for name, arr in expected.params.items():
        if name not in params or params[name].shape != arr.shape:
            raise CheckpointError(f"checkpoint tensor {name!r} missing or mis-shaped for its config")
    return FieldNet(cfg, {k: params[k] for k in expected.params})


def load_checkpoint(path) -> FieldNet:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return parse_checkpoint(path.read_bytes())
