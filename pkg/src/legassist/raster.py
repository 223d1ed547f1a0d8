"""Laser scan to occupancy grid rasterization, its inverse, and file formats.

Grid cells are 1 cm; the laser origin sits at the centre pixel ``(l, l)``
with ``l = matrix_length / 2``. ``grid.pixels[pixel_x, pixel_y]``: rows run
along the laser +x axis, columns along +y.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import FormatError, InvalidArgumentError
from .geometry import Point3

SCALE = 100.0  # pixels per metre
OCCUPIED = 255


@dataclass(frozen=True)
class GridSpec:
    matrix_length: int = 256

    def __post_init__(self):
        if self.matrix_length < 64 or self.matrix_length % 2:
            raise InvalidArgumentError(
                f"matrix_length must be even and >= 64, got {self.matrix_length}")

    @property
    def l(self) -> int:  # noqa: E743
        return self.matrix_length // 2

    @property
    def resolution(self) -> float:
        return 1.0 / SCALE


@dataclass(frozen=True, eq=False)
class LaserScan:
    timestamp: float
    angle_min: float
    angle_increment: float
    range_max: float
    ranges: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.ranges, dtype=np.float64)
        if r.ndim != 1:
            raise InvalidArgumentError("ranges must be one-dimensional")
        if not np.all(np.isfinite(r)) or np.any(r < 0) or np.any(r > self.range_max):
            raise InvalidArgumentError("ranges must be finite and inside [0, range_max]")
        r.setflags(write=False)
        object.__setattr__(self, "ranges", r)

    @property
    def angles(self) -> np.ndarray:
        return self.angle_min + self.angle_increment * np.arange(len(self.ranges))

    def endpoints(self) -> np.ndarray:
        """(N, 2) laser-frame endpoints of beams that returned (d < range_max)."""
        hit = self.ranges < self.range_max
        a = self.angles[hit]
        d = self.ranges[hit]
        return np.column_stack([d * np.cos(a), d * np.sin(a)])

    def __eq__(self, other):
        if not isinstance(other, LaserScan):
            return NotImplemented
        return (self.timestamp == other.timestamp and self.angle_min == other.angle_min
                and self.angle_increment == other.angle_increment
                and self.range_max == other.range_max
                and np.array_equal(self.ranges, other.ranges))

    def to_json(self) -> dict:
        return {"t": self.timestamp, "angle_min": self.angle_min,
                "angle_inc": self.angle_increment, "range_max": self.range_max,
                "ranges": self.ranges.tolist()}


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    pixels: np.ndarray
    spec: GridSpec = GridSpec()

    def __post_init__(self):
        p = np.asarray(self.pixels)
        n = self.spec.matrix_length
        if p.shape != (n, n):
            raise InvalidArgumentError(f"grid must be {n}x{n}, got {p.shape}")
        bad = ~np.isin(p, (0, OCCUPIED))
        if bad.any():
            raise InvalidArgumentError(f"grid pixel value {p[bad][0]} not in {{0, 255}}")
        p = p.astype(np.uint8)
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.pixels, other.pixels)

    def occupied(self) -> np.ndarray:
        return self.pixels == OCCUPIED


def round_half_away(v: np.ndarray | float) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def metric_to_pixel(x, y, spec: GridSpec = GridSpec()) -> tuple[np.ndarray, np.ndarray]:
    """Laser-frame metres to (unchecked) integer pixel indices."""
    px = round_half_away(np.asarray(x) * SCALE + spec.l).astype(np.int64)
    py = round_half_away(np.asarray(y) * SCALE + spec.l).astype(np.int64)
    return px, py


def rasterize_points(points: np.ndarray, spec: GridSpec = GridSpec()) -> np.ndarray:
    """Mark every in-grid laser-frame (x, y) point; returns a uint8 image."""
    n = spec.matrix_length
    img = np.zeros((n, n), dtype=np.uint8)
    if len(points) == 0:
        return img
    px, py = metric_to_pixel(points[:, 0], points[:, 1], spec)
    inside = (px >= 0) & (px < n) & (py >= 0) & (py < n)
    img[px[inside], py[inside]] = OCCUPIED
    return img


def rasterize(scan: LaserScan, spec: GridSpec = GridSpec()) -> OccupancyGrid:
    """Convert a scan to a binary occupancy grid (beams at range_max are skipped)."""
    return OccupancyGrid(rasterize_points(scan.endpoints(), spec), spec)


def deproject_cell(pixel_x: float, pixel_y: float, spec: GridSpec = GridSpec()) -> Point3:
    """Inverse of the rasterizer's pixel map: grid pixel to laser-frame metres, z = 0.

    Accepts fractional coordinates (blob centroids) inside ``[0, matrix_length)``.
    """
    n = spec.matrix_length
    if not (0 <= pixel_x < n and 0 <= pixel_y < n):
        raise InvalidArgumentError(f"pixel ({pixel_x}, {pixel_y}) outside [0, {n})")
    return Point3((pixel_x - spec.l) / SCALE, (pixel_y - spec.l) / SCALE, 0.0)


# ---------------------------------------------------------------- PGM files

def _pgm_header(w: int, h: int) -> bytes:
    return f"P5\n{w} {h}\n255\n".encode("ascii")


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    img = np.ascontiguousarray(image, dtype=np.uint8)
    if img.ndim != 2:
        raise InvalidArgumentError("PGM image must be two-dimensional")
    # rows are pixel_x, so the header's width is the column count
    Path(path).write_bytes(_pgm_header(img.shape[1], img.shape[0]) + img.tobytes())


def parse_pgm(data: bytes) -> np.ndarray:
    """Parse the strict ``P5\\n<W> <H>\\n255\\n`` + raw bytes layout."""
    first = data.find(b"\n")
    if first < 0 or data[:first] != b"P5":
        raise FormatError("bad PGM magic, expected 'P5'", 0)
    second = data.find(b"\n", first + 1)
    if second < 0:
        raise FormatError("truncated PGM header", len(data))
    dims = data[first + 1:second].split(b" ")
    try:
        if len(dims) != 2:
            raise ValueError
        w, h = int(dims[0]), int(dims[1])
        if w <= 0 or h <= 0:
            raise ValueError
    except ValueError:
        raise FormatError("malformed PGM dimensions line", first + 1) from None
    third = data.find(b"\n", second + 1)
    if third < 0 or data[second + 1:third] != b"255":
        raise FormatError("PGM maxval must be 255", second + 1)
    start = third + 1
    body = data[start:]
    if len(body) != w * h:
        raise FormatError(f"expected {w * h} pixel bytes, found {len(body)}",
                          start + min(len(body), w * h))
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


def read_pgm(path: str | Path) -> np.ndarray:
    return parse_pgm(Path(path).read_bytes())


def write_grid(path: str | Path, grid: OccupancyGrid) -> None:
    write_pgm(path, grid.pixels)


def read_grid(path: str | Path, spec: GridSpec | None = None) -> OccupancyGrid:
    data = Path(path).read_bytes()
    img = parse_pgm(data)
    header_len = len(data) - img.size
    if img.shape[0] != img.shape[1]:
        raise FormatError(f"grid must be square, got {img.shape[1]}x{img.shape[0]}", 3)
    spec = spec or GridSpec(img.shape[0])
    if img.shape[0] != spec.matrix_length:
        raise FormatError(f"grid must be {spec.matrix_length} wide, got {img.shape[0]}", 3)
    bad = np.flatnonzero((img != 0) & (img != OCCUPIED))
    if bad.size:
        k = int(bad[0])
        raise FormatError(f"pixel value {img.flat[k]} not in {{0, 255}}", header_len + k)
    return OccupancyGrid(img, spec)


# ---------------------------------------------------------------- scan logs

def scan_from_json(obj: dict) -> LaserScan:
    return LaserScan(float(obj["t"]), float(obj["angle_min"]), float(obj["angle_inc"]),
                     float(obj["range_max"]), np.asarray(obj["ranges"], dtype=np.float64))


def read_scans(path: str | Path) -> list[LaserScan]:
    """Read a JSONL scan log; any malformed line raises with its 1-based number."""
    scans = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                scans.append(scan_from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"bad scan record: {exc}", lineno, "line") from None
    return scans


def write_scans(path: str | Path, scans: Iterable[LaserScan]) -> None:
    with open(path, "w") as fh:
        for s in scans:
            fh.write(json.dumps(s.to_json()) + "\n")

