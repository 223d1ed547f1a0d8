"""Mini-batch Adam training of the U-Net on (grid, mask) pairs."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import InvalidArgumentError, TrainingDivergedError
from ..raster import OccupancyGrid
from .loss import occupied_positive_weight, positive_weight, weighted_bce_with_logits
from .unet import UNet, UNetConfig

log = logging.getLogger(__name__)

Sample = tuple[OccupancyGrid, np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 8
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    pos_weight: float | None = None  # None: derived from the training set, see weight_scope
    weight_scope: str = "occupied"  # "occupied": non-leg/leg returns; "all": background/leg pixels
    crop_size: int | None = 64  # None trains on full grids
    crops_per_sample: int = 8  # windows drawn from every grid per epoch (1 without cropping)
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidArgumentError("learning rate must be positive")
        if self.pos_weight is not None and self.pos_weight <= 0:
            raise InvalidArgumentError("positive-class weight must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.crops_per_sample < 1:
            raise InvalidArgumentError("epochs, batch size and crops per sample must be >= 1")
        if self.weight_scope not in ("occupied", "all"):
            raise InvalidArgumentError(f"weight_scope must be 'occupied' or 'all', got {self.weight_scope!r}")


@dataclass
class TrainResult:
    model: UNet
    loss_history: list[float]
    pos_weight: float
    val_history: list[float] = field(default_factory=list)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1: float, beta2: float, eps: float):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= (self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)).astype(params[k].dtype)


def _to_arrays(dataset: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([g.pixels for g, _ in dataset]).astype(np.float32) / 255.0
    y = (np.stack([m for _, m in dataset]) > 0).astype(np.float32)
    return x, y


def _crop_origin(mask: np.ndarray, occ: np.ndarray, size: int, rng: np.random.Generator) -> tuple[int, int]:
    """Window corner centred near a leg half of the time, near any return otherwise."""
    n = mask.shape[0]
    targets = np.argwhere(mask) if mask.any() and rng.random() < 0.5 else np.argwhere(occ)
    if len(targets):
        cx, cy = targets[rng.integers(len(targets))] + rng.integers(-size // 3, size // 3 + 1, size=2)
    else:
        cx, cy = rng.integers(0, n, size=2)
    ox = int(np.clip(cx - size // 2, 0, n - size))
    oy = int(np.clip(cy - size // 2, 0, n - size))
    return ox, oy


def evaluate_loss(model: UNet, dataset: Sequence[Sample], w: float, batch_size: int = 4) -> float:
    """Mean weighted BCE over full grids."""
    x, y = _to_arrays(dataset)
    total = 0.0
    for s in range(0, len(x), batch_size):
        xb = x[s:s + batch_size, :, :, None]
        loss, _ = weighted_bce_with_logits(model.forward(xb).astype(np.float64),
                                           y[s:s + batch_size, :, :, None], w)
        total += loss * len(xb)
    return total / len(x)


def train(dataset: Sequence[Sample], unet_cfg: UNetConfig = UNetConfig(),
          train_cfg: TrainConfig = TrainConfig(), *,
          validation: Sequence[Sample] | None = None,
          max_steps: int | None = None,
          model: UNet | None = None,
          callback: Callable[[int, float], None] | None = None) -> TrainResult:
    """Fit a U-Net; returns the model and the per-step training loss history.

    Raises :class:`TrainingDivergedError` on a non-finite loss.
    """
    if not dataset:
        raise InvalidArgumentError("dataset is empty")
    cfg = train_cfg
    rng = np.random.default_rng(cfg.seed)
    model = model or UNet(unet_cfg, seed=cfg.seed)
    x_all = np.stack([g.pixels for g, _ in dataset]) > 0
    y_all = np.stack([m for _, m in dataset]) > 0
    n, size = len(x_all), x_all.shape[1]
    if cfg.pos_weight is not None:
        w = cfg.pos_weight
    elif cfg.weight_scope == "all":
        w = positive_weight(y_all)
    else:
        w = occupied_positive_weight(x_all, y_all)
    crop = cfg.crop_size if cfg.crop_size and cfg.crop_size < size else None
    draws = np.repeat(np.arange(n), cfg.crops_per_sample if crop else 1)
    opt = Adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    history: list[float] = []
    val_history: list[float] = []
    if validation:
        val_history.append(evaluate_loss(model, validation, w))

    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(draws)
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            if crop:
                xb = np.empty((len(idx), crop, crop), np.float32)
                yb = np.empty_like(xb)
                for j, i in enumerate(idx):
                    ox, oy = _crop_origin(y_all[i], x_all[i], crop, rng)
                    xb[j] = x_all[i, ox:ox + crop, oy:oy + crop]
                    yb[j] = y_all[i, ox:ox + crop, oy:oy + crop]
            else:
                xb, yb = x_all[idx].astype(np.float32), y_all[idx].astype(np.float32)
            logits = model.forward(xb[..., None], keep_tape=True)
            loss, dlogits = weighted_bce_with_logits(logits, yb[..., None], w)
            if not math.isfinite(loss):
                raise TrainingDivergedError(step, loss)
            grads = model.backward(dlogits)
            opt.step(model.params, grads)
            history.append(loss)
            if callback:
                callback(step, loss)
            step += 1
            if max_steps is not None and step >= max_steps:
                break
        if validation:
            val_history.append(evaluate_loss(model, validation, w))
            log.info("epoch %d: train %.4f val %.4f", epoch, np.mean(history[-10:]), val_history[-1])
        if max_steps is not None and step >= max_steps:
            break
    return TrainResult(model, history, float(w), val_history)
