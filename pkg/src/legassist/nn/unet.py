"""A small U-Net: two 3x3 conv+ReLU per level, 2x2 max-pool down,
nearest-neighbour 2x up with skip concatenation, 1x1 conv head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError, ShapeError
from . import ops


@dataclass(frozen=True)
class UNetConfig:
    input_size: int = 256
    channels: tuple[int, ...] = (8, 16, 32)
    kernel_size: int = 3

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if not self.channels:
            raise InvalidArgumentError("channel list must be non-empty")
        if self.input_size % (2 ** len(self.channels)):
            raise InvalidArgumentError(
                f"input size {self.input_size} not divisible by 2^{len(self.channels)}")
        if self.kernel_size % 2 == 0:
            raise InvalidArgumentError("kernel size must be odd")


def _conv_shapes(cfg: UNetConfig) -> list[tuple[str, int, int, int]]:
    """(name, kernel, c_in, c_out) for every convolution in forward order."""
    k = cfg.kernel_size
    ch = cfg.channels
    shapes = []
    c_in = 1
    for i, c in enumerate(ch):
        shapes += [(f"enc{i}.conv0", k, c_in, c), (f"enc{i}.conv1", k, c, c)]
        c_in = c
    for i in range(len(ch) - 2, -1, -1):
        shapes += [(f"dec{i}.conv0", k, c_in + ch[i], ch[i]), (f"dec{i}.conv1", k, ch[i], ch[i])]
        c_in = ch[i]
    shapes.append(("head", 1, c_in, 1))
    return shapes


class UNet:
    """Parameters live in ``self.params`` as ``name.w`` / ``name.b`` arrays."""

    def __init__(self, cfg: UNetConfig = UNetConfig(), seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        for name, k, cin, cout in _conv_shapes(cfg):
            limit = np.sqrt(6.0 / (k * k * cin))
            self.params[f"{name}.w"] = rng.uniform(-limit, limit, (k, k, cin, cout)).astype(self.dtype)
            self.params[f"{name}.b"] = np.zeros(cout, dtype=self.dtype)
        self._tape: list | None = None

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def astype(self, dtype) -> UNet:
        other = UNet.__new__(UNet)
        other.cfg = self.cfg
        other.dtype = np.dtype(dtype)
        other.params = {k: v.astype(dtype) for k, v in self.params.items()}
        other._tape = None
        return other

    # -- forward / backward

    def _conv(self, name, x, tape):
        y, c = ops.conv2d_forward(x, self.params[f"{name}.w"], self.params[f"{name}.b"])
        tape.append(("conv", name, c))
        return y

    def _conv_relu(self, name, x, tape):
        y, m = ops.relu_forward(self._conv(name, x, tape))
        tape.append(("relu", name, m))
        return y

    def forward(self, x: np.ndarray, keep_tape: bool = False) -> np.ndarray:
        """Logits of shape (N, H, W, 1) for an input of shape (N, H, W, 1)."""
        if x.ndim != 4 or x.shape[3] != 1:
            raise ShapeError(f"expected (N, H, W, 1) input, got {x.shape}")
        if x.shape[1] % (2 ** (len(self.cfg.channels) - 1)) or x.shape[2] % (2 ** (len(self.cfg.channels) - 1)):
            raise ShapeError(f"spatial dims {x.shape[1:3]} not divisible by the pooling depth")
        x = x.astype(self.dtype, copy=False)
        tape: list = []
        skips = []
        levels = len(self.cfg.channels)
        for i in range(levels):
            x = self._conv_relu(f"enc{i}.conv0", x, tape)
            x = self._conv_relu(f"enc{i}.conv1", x, tape)
            if i < levels - 1:
                skips.append(x)
                x, c = ops.maxpool2_forward(x)
                tape.append(("pool", i, c))
        for i in range(levels - 2, -1, -1):
            x, c = ops.upsample2_forward(x)
            tape.append(("up", i, c))
            x, c = ops.concat_forward(x, skips[i])
            tape.append(("cat", i, c))
            x = self._conv_relu(f"dec{i}.conv0", x, tape)
            x = self._conv_relu(f"dec{i}.conv1", x, tape)
        logits = self._conv("head", x, tape)
        self._tape = tape if keep_tape else None
        return logits

    def backward(self, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients for the last ``forward(..., keep_tape=True)`` call."""
        if self._tape is None:
            raise RuntimeError("backward() needs a preceding forward(keep_tape=True)")
        grads: dict[str, np.ndarray] = {}
        skip_grads: dict[int, np.ndarray] = {}
        g = dlogits.astype(self.dtype, copy=False)
        for kind, key, cache in reversed(self._tape):
            if kind == "conv":
                g, dw, db = ops.conv2d_backward(g, cache)
                grads[f"{key}.w"] = dw
                grads[f"{key}.b"] = db
            elif kind == "relu":
                g = ops.relu_backward(g, cache)
            elif kind == "cat":
                g, skip_grads[key] = ops.concat_backward(g, cache)
            elif kind == "up":
                g = ops.upsample2_backward(g, cache)
            elif kind == "pool":
                g = ops.maxpool2_backward(g, cache) + skip_grads.pop(key)
        self._tape = None
        return grads

    def predict(self, x: np.ndarray) -> np.ndarray:
        return ops.sigmoid(self.forward(x))
