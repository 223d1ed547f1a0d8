"""Scan -> grid -> mask -> leg observation, shared by the CLI, evaluation and the follow loop."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .blobs import (AREA_BAND, LINK_RADIUS, LegObservation, connected_components,
                    extract_leg_midpoints, leg_sized, to_robot_frame)
from .geometry import RigidTransform
from .nn import SegmentationMask, UNet, unet_forward
from .raster import GridSpec, LaserScan, OccupancyGrid, rasterize

Segmenter = Callable[[OccupancyGrid], SegmentationMask]


def baseline_segment(grid: OccupancyGrid, area_band: tuple[int, int] = AREA_BAND) -> SegmentationMask:
    """Classical segmenter: every leg-sized blob of occupied pixels is called a leg.

    It has no notion of shape, so leg-sized clutter passes straight through.
    """
    out = np.zeros(grid.pixels.shape)
    for blob in connected_components(grid.occupied().astype(float), 0.5, LINK_RADIUS):
        if leg_sized(blob, area_band):
            out[blob.pixels[:, 0], blob.pixels[:, 1]] = 1.0
    return SegmentationMask(out, 0.5)


def model_segmenter(model: UNet, threshold: float = 0.5) -> Segmenter:
    def segment(grid: OccupancyGrid) -> SegmentationMask:
        return unet_forward(grid, model, threshold)
    return segment


@dataclass(frozen=True)
class Perception:
    grid: OccupancyGrid
    mask: SegmentationMask
    laser: LegObservation
    robot: LegObservation


def perceive(scan: LaserScan, segmenter: Segmenter, laser_to_base: RigidTransform,
             spec: GridSpec = GridSpec()) -> Perception:
    grid = rasterize(scan, spec)
    mask = segmenter(grid)
    blobs = connected_components(mask, mask.threshold, LINK_RADIUS)
    obs = extract_leg_midpoints(blobs, spec, scan.timestamp)
    return Perception(grid, mask, obs, to_robot_frame(obs, laser_to_base))
