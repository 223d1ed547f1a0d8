"""Leg blobs from a segmentation mask, leg-pair validation and frame change."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import FrameMismatchError, InvalidArgumentError
from .geometry import FrameId, Keypoint3D, Point3, RigidTransform, transform_point
from .raster import GridSpec, deproject_cell

AREA_BAND = (4, 400)  # pixels
SEPARATION_BAND = (0.05, 0.60)  # metres
# Range noise of about one pixel breaks a leg's arc of returns into pieces a
# pixel or two apart; the pipeline links pixels up to this Chebyshev distance.
LINK_RADIUS = 5

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True, eq=False)
class Blob:
    pixels: np.ndarray  # (area, 2) int array of (pixel_x, pixel_y), lexicographically sorted

    @property
    def area(self) -> int:
        return len(self.pixels)

    @property
    def centroid(self) -> tuple[float, float]:
        c = self.pixels.mean(axis=0)
        return float(c[0]), float(c[1])

    def pixel_set(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.pixels}


def connected_components(mask, threshold: float = 0.5, link_radius: int = 1) -> list[Blob]:
    """Connected components of ``mask >= threshold``.

    With the default ``link_radius=1`` these are the 8-connected components.
    A larger odd radius joins any two pixels within that Chebyshev distance
    (single linkage), which bridges small gaps in a noisy arc.

    ``mask`` may be a :class:`SegmentationMask` (its own threshold is ignored in
    favour of ``threshold``) or a plain 2D array. Blobs are ordered by area,
    largest first, ties broken by the smallest member pixel.
    """
    if link_radius < 1 or link_radius % 2 == 0:
        raise InvalidArgumentError(f"link_radius must be a positive odd integer, got {link_radius}")
    probs = getattr(mask, "probabilities", mask)
    on = np.asarray(probs) >= threshold
    grown = on
    if link_radius > 1:
        # squares of half-width h around two pixels touch iff their distance is <= 2h + 1
        h = (link_radius - 1) // 2
        grown = ndimage.binary_dilation(on, np.ones((2 * h + 1, 2 * h + 1), dtype=bool))
    labels, count = ndimage.label(grown, structure=EIGHT_CONNECTED)
    if count == 0:
        return []
    coords = np.argwhere(on)  # row-major, so each group comes out sorted
    ids = labels[coords[:, 0], coords[:, 1]]
    order = np.argsort(ids, kind="stable")
    coords, ids = coords[order], ids[order]
    splits = np.flatnonzero(np.diff(ids)) + 1
    blobs = [Blob(group) for group in np.split(coords, splits)]
    blobs.sort(key=lambda b: (-b.area, int(b.pixels[0, 0]), int(b.pixels[0, 1])))
    return blobs


def leg_sized(blob: Blob, area_band: tuple[int, int] = AREA_BAND) -> bool:
    return area_band[0] <= blob.area <= area_band[1]


@dataclass(frozen=True)
class LegObservation:
    left: Point3 | None
    right: Point3 | None
    timestamp: float = 0.0
    valid: bool = False
    reason: str = ""
    frame: FrameId = FrameId.LASER

    @property
    def midpoint(self) -> Point3:
        return Point3(*((np.asarray(self.left) + np.asarray(self.right)) / 2.0))


def invalid(timestamp: float, reason: str, frame: FrameId = FrameId.LASER) -> LegObservation:
    return LegObservation(None, None, timestamp, False, reason, frame)


def extract_leg_midpoints(blobs: Sequence[Blob], spec: GridSpec = GridSpec(),
                          timestamp: float = 0.0,
                          area_band: tuple[int, int] = AREA_BAND,
                          separation_band: tuple[float, float] = SEPARATION_BAND) -> LegObservation:
    """Validate one frame's blobs as a leg pair, in the laser frame.

    Invalid frames are returned as data with a reason code: ``"no legs"``,
    ``"single leg"``, ``"ambiguous count"`` or ``"separation"``.
    """
    legs = [b for b in blobs if leg_sized(b, area_band)]
    if len(legs) != 2:
        reason = {0: "no legs", 1: "single leg"}.get(len(legs), "ambiguous count")
        return invalid(timestamp, reason)
    a, b = (deproject_cell(*blob.centroid, spec) for blob in legs)
    sep = a.distance(b)
    lo, hi = separation_band
    # tolerate float noise at the closed bounds
    if not (lo - 1e-12 <= sep <= hi + 1e-12):
        return invalid(timestamp, "separation")
    left, right = (a, b) if a.y >= b.y else (b, a)
    return LegObservation(left, right, timestamp, True, "", FrameId.LASER)


def to_robot_frame(obs: LegObservation, m: RigidTransform) -> LegObservation:
    """Express an observation in ``m.target`` (laser legs and camera keypoints alike)."""
    if obs.frame != m.source:
        raise FrameMismatchError(
            f"observation is in frame {obs.frame.value}, transform expects {m.source.value}")
    if not obs.valid:
        return replace(obs, frame=m.target)
    return replace(obs, left=transform_point(obs.left, m), right=transform_point(obs.right, m),
                   frame=m.target)


def keypoint_to_frame(kp: Keypoint3D, m: RigidTransform) -> Keypoint3D:
    if kp.frame != m.source:
        raise FrameMismatchError(
            f"keypoint is in frame {kp.frame.value}, transform expects {m.source.value}")
    return replace(kp, point=transform_point(kp.point, m), frame=m.target)


def camera_gate(obs: LegObservation, keypoints: Iterable[Keypoint3D], *,
                window: float = 0.25, min_confidence: float = 0.3) -> LegObservation:
    """Invalidate a laser observation that has no upper-body camera keypoint
    within ``window`` seconds. Legs themselves always come from the laser."""
    if not obs.valid:
        return obs
    confirmed = any(abs(k.timestamp - obs.timestamp) <= window and k.confidence >= min_confidence
                    for k in keypoints)
    return obs if confirmed else replace(obs, valid=False, reason="no camera confirmation")


def separation(obs: LegObservation) -> float:
    return math.dist(obs.left, obs.right)
