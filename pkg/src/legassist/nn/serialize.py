"""Binary model files.

Layout (little-endian): magic ``MINASEG1``; u32 tensor count; per tensor a
u32 name length, the UTF-8 name, u32 rank, ``rank`` u32 dims, then the
values as raw f32.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .unet import UNet, UNetConfig, _conv_shapes

MAGIC = b"MINASEG1"


def model_to_bytes(model: UNet) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(model.params))]
    for name, arr in model.params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_model(path: str | Path, model: UNet) -> None:
    Path(path).write_bytes(model_to_bytes(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated model file while reading {what}", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def model_from_bytes(data: bytes, input_size: int = 256) -> UNet:
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError("bad model magic, expected MINASEG1", 0)
    count = r.u32("tensor count")
    params = {}
    for _ in range(count):
        start = r.pos
        name_len = r.u32("name length")
        try:
            name = r.take(name_len, "tensor name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not UTF-8", start + 4) from None
        rank = r.u32("rank")
        if rank > 8:
            raise FormatError(f"implausible tensor rank {rank}", r.pos - 4)
        dims = tuple(r.u32("dimension") for _ in range(rank))
        n = int(np.prod(dims)) if dims else 1
        values = np.frombuffer(r.take(4 * n, f"values of {name}"), dtype="<f4")
        params[name] = values.reshape(dims).astype(np.float32)
    if r.pos != len(data):
        raise FormatError("trailing bytes after last tensor", r.pos)

    try:
        n_levels = sum(1 for k in params if k.startswith("enc") and k.endswith(".conv0.w"))
        channels = tuple(params[f"enc{i}.conv0.w"].shape[3] for i in range(n_levels))
        cfg = UNetConfig(input_size, channels, params["enc0.conv0.w"].shape[0])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"tensors do not describe a U-Net: {exc}", len(MAGIC)) from None
    expected = {}
    for name, k, cin, cout in _conv_shapes(cfg):
        expected[f"{name}.w"] = (k, k, cin, cout)
        expected[f"{name}.b"] = (cout,)
    got = {k: v.shape for k, v in params.items()}
    if got != expected:
        raise FormatError("tensor names/shapes do not match the U-Net layout", len(MAGIC))
    model = UNet.__new__(UNet)
    model.cfg = cfg
    model.dtype = np.dtype(np.float32)
    model.params = {k: params[k] for k in expected}
    model._tape = None
    return model


def load_model(path: str | Path, input_size: int = 256) -> UNet:
    return model_from_bytes(Path(path).read_bytes(), input_size)
