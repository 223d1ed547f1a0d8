"""Forward and backward passes of the network building blocks.

Tensors are plain numpy arrays in NHWC layout (batch, height, width,
channels). Every ``*_forward`` returns ``(output, cache)`` and the matching
``*_backward`` consumes ``(grad_output, cache)``.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def _require(cond: bool, what: str, a, b) -> None:
    if not cond:
        raise ShapeError(f"{what}: incompatible shapes {tuple(a)} and {tuple(b)}")


def flush_subnormals(a: np.ndarray) -> np.ndarray:
    """Zero, in place, entries so small that their products would be subnormal.

    Late in training many gradients drift toward the subnormal range, where float
    arithmetic is several times slower. The cutoff (2**24 times the smallest
    normal) stays far below any gradient that can move a float32 weight.
    """
    a[np.abs(a) < np.finfo(a.dtype).tiny * 2.0 ** 24] = 0.0
    return a


# ---------------------------------------------------------------- conv2d

def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Same-padded, stride-1 convolution. ``w`` has shape (k, k, C_in, C_out), k odd.

    Implemented as k*k shifted matrix products, which avoids materializing
    the full im2col buffer.
    """
    _require(x.ndim == 4 and w.ndim == 4 and x.shape[3] == w.shape[2], "conv2d", x.shape, w.shape)
    _require(b.shape == (w.shape[3],), "conv2d bias", b.shape, w.shape)
    k = w.shape[0]
    _require(k == w.shape[1] and k % 2 == 1, "conv2d kernel", w.shape, w.shape)
    n, h, wd, cin = x.shape
    cout = w.shape[3]
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
    y = np.empty((n * h * wd, cout), dtype=x.dtype)
    y[...] = b
    for i in range(k):
        for j in range(k):
            y += xp[:, i:i + h, j:j + wd, :].reshape(-1, cin) @ w[i, j]
    return y.reshape(n, h, wd, cout), (xp, w)


def conv2d_backward(dy: np.ndarray, cache):
    xp, w = cache
    k = w.shape[0]
    p = k // 2
    n, h, wd, cout = dy.shape
    cin = w.shape[2]
    dy2 = dy.reshape(-1, cout)
    dw = np.empty_like(w)
    dxp = np.zeros_like(xp)
    for i in range(k):
        for j in range(k):
            patch = xp[:, i:i + h, j:j + wd, :].reshape(-1, cin)
            dw[i, j] = patch.T @ dy2
            dxp[:, i:i + h, j:j + wd, :] += (dy2 @ w[i, j].T).reshape(n, h, wd, cin)
    db = dy2.sum(axis=0)
    dx = dxp[:, p:p + h, p:p + wd, :] if p else dxp
    flush_subnormals(dx)
    return dx, dw, db


# ---------------------------------------------------------------- pointwise

def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy: np.ndarray, mask):
    return dy * mask


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_forward(x: np.ndarray):
    y = sigmoid(x)
    return y, y


def sigmoid_backward(dy: np.ndarray, y):
    return dy * y * (1.0 - y)


# ---------------------------------------------------------------- resampling

def maxpool2_forward(x: np.ndarray):
    n, h, w, c = x.shape
    _require(h % 2 == 0 and w % 2 == 0, "maxpool2 needs even spatial dims", x.shape, (2, 2))
    blocks = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(
        n, h // 2, w // 2, c, 4)
    idx = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return y, (x.shape, idx)


def maxpool2_backward(dy: np.ndarray, cache):
    shape, idx = cache
    n, h, w, c = shape
    # gradient goes to the first maximal element of each window
    blocks = np.zeros((n, h // 2, w // 2, c, 4), dtype=dy.dtype)
    np.put_along_axis(blocks, idx[..., None], dy[..., None], axis=-1)
    return blocks.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(shape)


def upsample2_forward(x: np.ndarray):
    return x.repeat(2, axis=1).repeat(2, axis=2), x.shape


def upsample2_backward(dy: np.ndarray, shape):
    n, h, w, c = shape
    return dy.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4))


def concat_forward(a: np.ndarray, b: np.ndarray):
    _require(a.shape[:3] == b.shape[:3], "concat", a.shape, b.shape)
    return np.concatenate([a, b], axis=3), a.shape[3]


def concat_backward(dy: np.ndarray, split: int):
    return dy[..., :split], dy[..., split:]
