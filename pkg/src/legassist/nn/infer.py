from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import FormatError, InvalidArgumentError, ShapeError
from ..raster import OccupancyGrid, read_pgm, write_pgm
from .unet import UNet


@dataclass(frozen=True, eq=False)
class SegmentationMask:
    """Per-pixel leg probabilities plus the threshold used to binarize them."""

    probabilities: np.ndarray
    threshold: float = 0.5

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.ndim != 2:
            raise ShapeError(f"mask must be two-dimensional, got {p.shape}")
        if not np.all((p >= 0) & (p <= 1)):
            raise InvalidArgumentError("mask probabilities must lie in [0, 1]")
        if not 0 < self.threshold < 1:
            raise InvalidArgumentError(f"threshold {self.threshold} outside (0, 1)")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    @classmethod
    def from_binary(cls, image: np.ndarray, threshold: float = 0.5) -> SegmentationMask:
        return cls((np.asarray(image) > 0).astype(np.float64), threshold)

    def binary(self) -> np.ndarray:
        return self.probabilities >= self.threshold

    def quantized(self) -> np.ndarray:
        return np.round(self.probabilities * 255.0).astype(np.uint8)


def unet_forward(grid: OccupancyGrid, model: UNet, threshold: float = 0.5) -> SegmentationMask:
    n = grid.spec.matrix_length
    if n != model.cfg.input_size:
        raise ShapeError(f"grid size {n} does not match model input size {model.cfg.input_size}")
    x = (grid.pixels.astype(model.dtype) / 255.0)[None, :, :, None]
    return SegmentationMask(model.predict(x)[0, :, :, 0].astype(np.float64), threshold)


def write_mask(path: str | Path, mask: SegmentationMask) -> None:
    """PGM of the quantized probabilities with a ``.json`` sidecar holding the threshold."""
    path = Path(path)
    write_pgm(path, mask.quantized())
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps({"threshold": mask.threshold}) + "\n")


def read_mask(path: str | Path) -> SegmentationMask:
    path = Path(path)
    img = read_pgm(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    threshold = 0.5
    if sidecar.exists():
        try:
            threshold = float(json.loads(sidecar.read_text())["threshold"])
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"bad mask sidecar {sidecar}: {exc}", 1, "line") from None
    return SegmentationMask(img / 255.0, threshold)
