"""Deterministic 2D laser and walking-person simulator.

All scene geometry lives in the laser frame (L). The scanner sits at the
origin; legs are circles and clutter boxes are oriented rectangles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgumentError
from .geometry import FrameId, Point3, RigidTransform
from .raster import GridSpec, LaserScan, OccupancyGrid, rasterize_points

NO_HIT = -1

# Rear scanner mounted 0.25 m behind the base origin, facing backwards.
DEFAULT_LASER_POSE = RigidTransform.planar(-0.25, 0.0, math.pi, FrameId.LASER, FrameId.ROBOT_BASE)


@dataclass(frozen=True)
class LaserSpec:
    angle_min: float = -math.radians(135.0)
    angle_increment: float = math.radians(0.25)
    beam_count: int = 1081
    range_max: float = 20.0
    range_noise_sigma: float = 0.01

    def __post_init__(self):
        if self.beam_count < 2 or self.angle_increment <= 0 or self.range_max <= 0:
            raise InvalidArgumentError(f"invalid laser spec {self}")
        if self.range_noise_sigma < 0:
            raise InvalidArgumentError("noise sigma must be >= 0")

    @property
    def angles(self) -> np.ndarray:
        return self.angle_min + self.angle_increment * np.arange(self.beam_count)


@dataclass(frozen=True)
class LegDisk:
    center: Point3
    radius: float = 0.06

    def __post_init__(self):
        if not 0.03 <= self.radius <= 0.12:
            raise InvalidArgumentError(f"leg radius {self.radius} outside [0.03, 0.12]")
        object.__setattr__(self, "center", Point3(*(float(v) for v in self.center)))
        if self.center.z != 0:
            raise InvalidArgumentError("leg disks lie in the scan plane (z = 0)")


@dataclass(frozen=True)
class ClutterBox:
    cx: float
    cy: float
    hx: float
    hy: float
    yaw: float = 0.0

    def __post_init__(self):
        if not (0.02 <= self.hx <= 0.20 and 0.02 <= self.hy <= 0.20):
            raise InvalidArgumentError(f"box half-extents ({self.hx}, {self.hy}) outside [0.02, 0.20]")

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        local = np.array([[1, 1], [1, -1], [-1, -1], [-1, 1]]) * (self.hx, self.hy)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + (self.cx, self.cy)

    def farthest_extent(self) -> float:
        return float(np.hypot(*self.corners().T).max())


@dataclass(frozen=True)
class Scene:
    legs: tuple[LegDisk, ...]
    clutter: tuple[ClutterBox, ...] = ()
    laser_pose: RigidTransform = DEFAULT_LASER_POSE
    seed: int = 0

    def __post_init__(self):
        legs = self.legs
        for i in range(len(legs)):
            for j in range(i + 1, len(legs)):
                gap = legs[i].center.distance(legs[j].center)
                if gap < legs[i].radius + legs[j].radius:
                    raise InvalidArgumentError("leg disks overlap")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """``leg_centers`` are the disk centres. A 2D scanner only sees the near arc
    of each leg, whose centroid sits about pi*r/4 closer to the laser, so
    ``visible_centers`` (centroid of each leg's own mask pixels) is what
    detections are scored against."""

    leg_centers: tuple[Point3, ...]
    mask: np.ndarray
    stride_length: float = 0.0
    stride_velocity: float = 0.0
    visible_centers: tuple[Point3, ...] = ()

    def reference_centers(self) -> tuple[Point3, ...]:
        return self.visible_centers or self.leg_centers


@dataclass(frozen=True)
class WalkerModel:
    """Torso kinematics plus sinusoidal fore-aft foot motion.

    Each foot sits at ``torso + a*sin(phase_i)`` along the heading with
    ``a = stride_length / (2*pi)``, which makes the foot speed
    ``v*(1 + cos(phase_i))``: it touches zero exactly once per cycle (stance).
    """

    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    speed: float = 0.0
    stride_length: float = 1.0
    half_separation: float = 0.1
    phase: float = 0.0
    leg_radius: float = 0.06

    def __post_init__(self):
        if self.speed < 0:
            raise InvalidArgumentError("walking speed must be >= 0")
        if self.speed > 0 and self.stride_length <= 0:
            raise InvalidArgumentError("stride_length must be > 0 while walking")

    @property
    def cadence(self) -> float:
        return self.speed / self.stride_length if self.speed > 0 else 0.0

    @property
    def amplitude(self) -> float:
        return self.stride_length / (2 * math.pi) if self.speed > 0 else 0.0

    def foot_positions(self) -> np.ndarray:
        """(2, 2) world positions of the left and right foot."""
        hx, hy = math.cos(self.heading), math.sin(self.heading)
        out = np.empty((2, 2))
        for i, side in enumerate((1.0, -1.0)):
            fore = self.amplitude * math.sin(self.phase + i * math.pi)
            out[i] = (self.x + fore * hx - side * self.half_separation * hy,
                      self.y + fore * hy + side * self.half_separation * hx)
        return out

    def legs(self) -> tuple[LegDisk, LegDisk]:
        f = self.foot_positions()
        return (LegDisk(Point3(float(f[0, 0]), float(f[0, 1])), self.leg_radius),
                LegDisk(Point3(float(f[1, 0]), float(f[1, 1])), self.leg_radius))


def step_walker(model: WalkerModel, dt: float) -> tuple[WalkerModel, tuple[LegDisk, LegDisk]]:
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    d = model.speed * dt
    nxt = replace(model,
                  x=model.x + d * math.cos(model.heading),
                  y=model.y + d * math.sin(model.heading),
                  phase=model.phase + 2 * math.pi * model.cadence * dt)
    return nxt, nxt.legs()


# ---------------------------------------------------------------- ray casting

def _ray_circles(dirs: np.ndarray, legs) -> tuple[np.ndarray, np.ndarray]:
    n = len(dirs)
    best = np.full(n, np.inf)
    label = np.full(n, NO_HIT)
    for k, leg in enumerate(legs):
        c = np.array([leg.center.x, leg.center.y])
        b = dirs @ c
        disc = b * b - (c @ c - leg.radius ** 2)
        ok = disc >= 0
        t = np.where(ok, b - np.sqrt(np.where(ok, disc, 0.0)), np.inf)
        t = np.where(t > 0, t, np.inf)
        closer = t < best
        best[closer] = t[closer]
        label[closer] = k
    return best, label


def _ray_boxes(dirs: np.ndarray, boxes, first_label: int) -> tuple[np.ndarray, np.ndarray]:
    n = len(dirs)
    best = np.full(n, np.inf)
    label = np.full(n, NO_HIT)
    for k, box in enumerate(boxes):
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        # ray origin and direction in the box frame
        o = np.array([-(c * box.cx + s * box.cy), -(-s * box.cx + c * box.cy)])
        u = np.column_stack([c * dirs[:, 0] + s * dirs[:, 1], -s * dirs[:, 0] + c * dirs[:, 1]])
        t_near = np.full(n, -np.inf)
        t_far = np.full(n, np.inf)
        for axis, half in ((0, box.hx), (1, box.hy)):
            ua = u[:, axis]
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (-half - o[axis]) / ua
                t2 = (half - o[axis]) / ua
            parallel = ua == 0
            inside_slab = abs(o[axis]) <= half
            lo = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), np.minimum(t1, t2))
            hi = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), np.maximum(t1, t2))
            t_near = np.maximum(t_near, lo)
            t_far = np.minimum(t_far, hi)
        hit = (t_near <= t_far) & (t_near > 0)
        t = np.where(hit, t_near, np.inf)
        closer = t < best
        best[closer] = t[closer]
        label[closer] = first_label + k
    return best, label


def trace_rays(scene: Scene, angles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free nearest hit distance per ray (inf when nothing is hit) and
    the hit label: leg index, ``len(legs) + box index`` or ``NO_HIT``."""
    dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    d_leg, l_leg = _ray_circles(dirs, scene.legs)
    d_box, l_box = _ray_boxes(dirs, scene.clutter, len(scene.legs))
    use_box = d_box < d_leg
    return np.where(use_box, d_box, d_leg), np.where(use_box, l_box, l_leg)


def cast_with_labels(scene: Scene, spec: LaserSpec, rng_seed: int,
                     timestamp: float = 0.0) -> tuple[LaserScan, np.ndarray]:
    dist, label = trace_rays(scene, spec.angles)
    hit = dist < spec.range_max
    ranges = np.where(hit, dist, spec.range_max)
    if spec.range_noise_sigma > 0:
        noise = np.random.default_rng(rng_seed).normal(0.0, spec.range_noise_sigma, spec.beam_count)
        # no-return beams stay at range_max
        ranges = np.where(hit, np.clip(ranges + noise, 0.0, spec.range_max), ranges)
    label = np.where(hit, label, NO_HIT)
    scan = LaserScan(timestamp, spec.angle_min, spec.angle_increment, spec.range_max, ranges)
    return scan, label


def cast_scan(scene: Scene, spec: LaserSpec = LaserSpec(), rng_seed: int = 0,
              timestamp: float = 0.0) -> LaserScan:
    return cast_with_labels(scene, spec, rng_seed, timestamp)[0]


def leg_mask(scan: LaserScan, labels: np.ndarray, n_legs: int,
             grid: GridSpec = GridSpec(), only: int | None = None) -> np.ndarray:
    """Rasterize only the beams that hit a leg (or just leg ``only``)."""
    hit = (labels >= 0) & (labels < n_legs) & (scan.ranges < scan.range_max)
    if only is not None:
        hit &= labels == only
    a = scan.angles[hit]
    d = scan.ranges[hit]
    return rasterize_points(np.column_stack([d * np.cos(a), d * np.sin(a)]), grid)


def ground_truth(scene: Scene, scan: LaserScan, labels: np.ndarray,
                 grid: GridSpec = GridSpec(), stride_length: float = 0.0,
                 stride_velocity: float = 0.0) -> GroundTruth:
    n = len(scene.legs)
    visible = []
    for i, leg in enumerate(scene.legs):
        px = np.argwhere(leg_mask(scan, labels, n, grid, only=i))
        if len(px) == 0:
            visible.append(leg.center)
            continue
        cx, cy = px.mean(axis=0)
        visible.append(Point3((cx - grid.l) / 100.0, (cy - grid.l) / 100.0, 0.0))
    return GroundTruth(tuple(leg.center for leg in scene.legs), leg_mask(scan, labels, n, grid),
                       stride_length, stride_velocity, tuple(visible))


# ---------------------------------------------------------------- protocol

PROTOCOL_DISTANCES = (0.5, 0.8, 1.1)
PROTOCOL_OFFSETS = (-0.3, 0.0, 0.3)
CLUTTER_COUNTS = {1: (0, 2), 2: (6, 8)}


def protocol_location(location: int) -> tuple[float, float]:
    """Laser-frame torso position of location 1..9 (row-major over distance)."""
    if not 1 <= location <= 9:
        raise InvalidArgumentError(f"location must be 1..9, got {location}")
    row, col = divmod(location - 1, 3)
    return PROTOCOL_DISTANCES[row], PROTOCOL_OFFSETS[col]


def _bearing_span(points: np.ndarray) -> tuple[float, float]:
    ang = np.arctan2(points[:, 1], points[:, 0])
    return float(ang.min()), float(ang.max())


def _leg_span(leg: LegDisk) -> tuple[float, float]:
    c = math.atan2(leg.center.y, leg.center.x)
    half = math.asin(min(1.0, leg.radius / math.hypot(leg.center.x, leg.center.y)))
    return c - half, c + half


def _spans_overlap(a, b, margin: float) -> bool:
    return a[0] - margin <= b[1] and b[0] - margin <= a[1]


def place_clutter(rng: np.random.Generator, legs, count: int, *,
                  extent: float = 1.15, half_range=(0.03, 0.07),
                  min_leg_gap: float = 0.25, occlusion_margin: float = math.radians(3.0),
                  max_tries: int = 2000) -> tuple[ClutterBox, ...]:
    """Scatter ``count`` leg-sized boxes that neither touch nor occlude the legs."""
    boxes: list[ClutterBox] = []
    leg_spans = [_leg_span(leg) for leg in legs]
    tries = 0
    while len(boxes) < count and tries < max_tries:
        tries += 1
        hx, hy = rng.uniform(*half_range, size=2)
        cx, cy = rng.uniform(-extent, extent, size=2)
        box = ClutterBox(float(cx), float(cy), float(hx), float(hy), float(rng.uniform(-math.pi, math.pi)))
        radius = math.hypot(hx, hy)
        if math.hypot(cx, cy) < 0.3 + radius:
            continue
        if any(math.hypot(cx - l.center.x, cy - l.center.y) < min_leg_gap + radius + l.radius
               for l in legs):
            continue
        if any(math.hypot(cx - b.cx, cy - b.cy) < math.hypot(b.hx, b.hy) + radius + 0.05
               for b in boxes):
            continue
        corners = box.corners()
        if np.abs(corners).max() > extent + 0.1:
            continue
        span = _bearing_span(corners)
        if span[1] - span[0] > math.pi:  # wraps around +-pi, stay out of the rear gap
            continue
        if any(_spans_overlap(span, ls, occlusion_margin) for ls in leg_spans):
            continue
        boxes.append(box)
    return tuple(boxes)


def standing_legs(x: float, y: float, rng: np.random.Generator | None = None,
                  half_separation: float = 0.1, radius: float = 0.06) -> tuple[LegDisk, LegDisk]:
    """Two leg disks side by side across the line of sight to (x, y)."""
    bearing = math.atan2(y, x)
    jitter = np.zeros(2) if rng is None else rng.uniform(-0.02, 0.02, size=2)
    nx, ny = -math.sin(bearing), math.cos(bearing)
    legs = []
    for side, j in zip((1.0, -1.0), jitter):
        legs.append(LegDisk(Point3(x + side * half_separation * nx + j * math.cos(bearing),
                                   y + side * half_separation * ny + j * math.sin(bearing)), radius))
    return tuple(legs)


@dataclass(frozen=True)
class Trial:
    scenario: int
    location: int
    scene: Scene
    truth: GroundTruth
    scan: LaserScan = field(repr=False, default=None)


def gen_protocol_trials(seed: int, spec: LaserSpec = LaserSpec(),
                        grid: GridSpec = GridSpec()) -> list[Trial]:
    """Nine standing locations in each of two clutter scenarios (18 trials)."""
    trials = []
    for scenario in (1, 2):
        for location in range(1, 10):
            idx = len(trials)
            rng = np.random.default_rng((seed, idx))
            x, y = protocol_location(location)
            legs = standing_legs(x, y, rng)
            lo, hi = CLUTTER_COUNTS[scenario]
            count = int(rng.integers(lo, hi + 1))
            clutter = place_clutter(rng, legs, count)
            scene = Scene(legs, clutter, seed=seed * 1000 + idx)
            scan, labels = cast_with_labels(scene, spec, scene.seed)
            trials.append(Trial(scenario, location, scene,
                                ground_truth(scene, scan, labels, grid), scan))
    return trials


# ---------------------------------------------------------------- training data

@dataclass(frozen=True)
class Augmentation:
    rotation: bool = True
    flip: bool = True
    translate_px: int = 10


def random_scene(rng: np.random.Generator, seed: int = 0) -> Scene:
    """Randomized training scene: a person (usually) plus 0-8 boxes."""
    legs: tuple[LegDisk, ...] = ()
    if rng.random() < 0.9:
        dist = rng.uniform(0.35, 1.15)
        bearing = rng.uniform(-math.radians(130), math.radians(130))
        radius = float(rng.uniform(0.045, 0.08))
        half_sep = float(rng.uniform(max(0.07, radius + 0.01), 0.2))
        x, y = dist * math.cos(bearing), dist * math.sin(bearing)
        legs = standing_legs(x, y, None, half_sep, radius)
        # fore-aft stagger as in mid-stride
        stagger = rng.uniform(-0.15, 0.15)
        ux, uy = math.cos(bearing), math.sin(bearing)
        legs = (LegDisk(Point3(legs[0].center.x + stagger * ux, legs[0].center.y + stagger * uy), radius),
                LegDisk(Point3(legs[1].center.x - stagger * ux, legs[1].center.y - stagger * uy), radius))
    count = int(rng.integers(0, 9))
    clutter = place_clutter(rng, legs, count, half_range=(0.02, 0.10), min_leg_gap=0.1,
                            occlusion_margin=0.0)
    return Scene(legs, clutter, seed=seed)


def _augment_points(points: np.ndarray, rng: np.random.Generator, aug: Augmentation) -> np.ndarray:
    pts = points
    if aug.rotation:
        # rotating every endpoint about the origin == shifting every beam angle
        th = rng.uniform(-math.pi, math.pi)
        c, s = math.cos(th), math.sin(th)
        pts = pts @ np.array([[c, s], [-s, c]])
    if aug.flip and rng.random() < 0.5:
        pts = pts * (1.0, -1.0)
    if aug.translate_px:
        shift = rng.integers(-aug.translate_px, aug.translate_px + 1, size=2) / 100.0
        pts = pts + shift
    return pts


def gen_training_set(n: int, seed: int, spec: LaserSpec = LaserSpec(),
                     grid: GridSpec = GridSpec(),
                     augmentation: Augmentation | None = Augmentation()
                     ) -> list[tuple[OccupancyGrid, np.ndarray]]:
    """``n`` randomized (grid, mask) pairs; mask pixels are the leg returns."""
    if n <= 0:
        raise InvalidArgumentError("n must be positive")
    out = []
    for i in range(n):
        rng = np.random.default_rng((seed, i))
        scene = random_scene(rng, seed=seed * 100003 + i)
        noisy = replace(spec, range_noise_sigma=float(rng.uniform(0.0, 0.015)))
        scan, labels = cast_with_labels(scene, noisy, int(rng.integers(2**31)))
        hit = scan.ranges < scan.range_max
        pts = np.column_stack([scan.ranges * np.cos(scan.angles), scan.ranges * np.sin(scan.angles)])[hit]
        is_leg = (labels[hit] >= 0) & (labels[hit] < len(scene.legs))
        if augmentation is not None:
            pts = _augment_points(pts, rng, augmentation)
        out.append((OccupancyGrid(rasterize_points(pts, grid), grid),
                    rasterize_points(pts[is_leg], grid)))
    return out
