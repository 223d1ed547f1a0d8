"""Points, rigid transforms between the camera, laser and base frames.

Transforms use the row-vector convention: a point is the homogeneous row
``[x y z 1]`` and is mapped by right-multiplication, ``p_target = p_source @ M``.
The rotation block therefore sits in ``M[:3, :3]`` as the *transpose* of the
usual column-convention rotation, and the translation occupies the last row.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import FormatError, FrameMismatchError, InvalidArgumentError, InvalidDepthError

ORTHO_TOL = 1e-9


class FrameId(enum.Enum):
    CAMERA = "C"
    LASER = "L"
    ROBOT_BASE = "R"


class Point3(NamedTuple):
    x: float
    y: float
    z: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def distance(self, other: Point3) -> float:
        return math.dist(self, other)


def _check_finite(values, what: str) -> None:
    if not np.all(np.isfinite(np.asarray(values, dtype=np.float64))):
        raise InvalidArgumentError(f"{what} must be finite, got {values!r}")


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """4x4 homogeneous transform from ``source`` to ``target`` (row-vector form)."""

    matrix: np.ndarray
    source: FrameId
    target: FrameId
    _validated: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise InvalidArgumentError(f"transform matrix must be 4x4, got shape {m.shape}")
        _check_finite(m, "transform matrix")
        rot = m[:3, :3]
        if not np.allclose(rot.T @ rot, np.eye(3), rtol=0.0, atol=ORTHO_TOL):
            raise InvalidArgumentError("rotation block is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > ORTHO_TOL:
            raise InvalidArgumentError("rotation block determinant is not +1")
        if not np.array_equal(m[:3, 3], np.zeros(3)) or m[3, 3] != 1.0:
            raise InvalidArgumentError("last column must be [0 0 0 1]^T")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls, source: FrameId = FrameId.LASER, target: FrameId = FrameId.ROBOT_BASE):
        return cls(np.eye(4), source, target)

    @classmethod
    def from_rotation_translation(cls, rotation, translation, source: FrameId, target: FrameId):
        """Build from a column-convention rotation ``R`` and translation ``t``.

        The resulting transform maps ``p -> R p + t``.
        """
        m = np.eye(4)
        m[:3, :3] = np.asarray(rotation, dtype=np.float64).T
        m[3, :3] = np.asarray(translation, dtype=np.float64)
        return cls(m, source, target)

    @classmethod
    def planar(cls, x: float, y: float, yaw: float, source: FrameId, target: FrameId,
               z: float = 0.0):
        """Yaw rotation about z followed by translation (x, y, z)."""
        c, s = math.cos(yaw), math.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls.from_rotation_translation(rot, (x, y, z), source, target)

    @property
    def rotation(self) -> np.ndarray:
        """Column-convention rotation matrix."""
        return self.matrix[:3, :3].T

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[3, :3].copy()

    @property
    def yaw(self) -> float:
        r = self.rotation
        return math.atan2(r[1, 0], r[0, 0])

    def allclose(self, other: RigidTransform, atol: float = 1e-9) -> bool:
        return (self.source == other.source and self.target == other.target
                and np.allclose(self.matrix, other.matrix, rtol=0.0, atol=atol))

    def to_json(self) -> dict:
        return {"source": self.source.value, "target": self.target.value,
                "matrix": self.matrix.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> RigidTransform:
        try:
            return cls(np.array(obj["matrix"], dtype=np.float64),
                       FrameId(obj["source"]), FrameId(obj["target"]))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidArgumentError):
                raise
            raise InvalidArgumentError(f"malformed transform config: {exc}") from exc


def transform_point(p: Point3, m: RigidTransform) -> Point3:
    """Map ``p`` from ``m.source`` into ``m.target``: ``[x y z 1] @ M``."""
    _check_finite(p, "point")
    row = np.array([p[0], p[1], p[2], 1.0]) @ m.matrix
    return Point3(float(row[0] / row[3]), float(row[1] / row[3]), float(row[2] / row[3]))


def transform_points(points: np.ndarray, m: RigidTransform) -> np.ndarray:
    """Vectorized :func:`transform_point` over an (N, 3) array."""
    pts = np.asarray(points, dtype=np.float64)
    _check_finite(pts, "points")
    return pts @ m.matrix[:3, :3] + m.matrix[3, :3]


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``a`` then ``b``."""
    if a.target != b.source:
        raise FrameMismatchError(
            f"cannot compose {a.source.value}->{a.target.value} with "
            f"{b.source.value}->{b.target.value}")
    m = a.matrix @ b.matrix
    # re-orthonormalize to keep long chains inside tolerance
    u, _, vt = np.linalg.svd(m[:3, :3])
    m[:3, :3] = u @ vt
    return RigidTransform(m, a.source, b.target)


def invert(m: RigidTransform) -> RigidTransform:
    rot_row = m.matrix[:3, :3]
    out = np.eye(4)
    out[:3, :3] = rot_row.T
    out[3, :3] = -m.matrix[3, :3] @ rot_row.T
    return RigidTransform(out, m.target, m.source)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgumentError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidArgumentError("principal point outside the image")


@dataclass(frozen=True)
class Keypoint3D:
    point: Point3
    frame: FrameId
    timestamp: float
    label: str
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidArgumentError(f"confidence {self.confidence} outside [0, 1]")


def deproject_pixel(u: float, v: float, depth: float, k: CameraIntrinsics) -> Point3:
    """Pinhole back-projection of pixel (u, v) at ``depth`` into the camera frame."""
    if not depth > 0:
        raise InvalidDepthError(f"depth must be positive, got {depth}")
    if not (0 <= u < k.width and 0 <= v < k.height):
        raise InvalidArgumentError(f"pixel ({u}, {v}) outside {k.width}x{k.height} image")
    return Point3((u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, float(depth))


def project_point(p: Point3, k: CameraIntrinsics) -> tuple[float, float]:
    """Forward pinhole projection of a camera-frame point to pixel coordinates."""
    if not p.z > 0:
        raise InvalidDepthError(f"point behind the camera: z={p.z}")
    return k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy


def load_transforms(path: str | Path) -> dict[tuple[FrameId, FrameId], RigidTransform]:
    """Read a transform config: one object or a list of ``{"source", "target", "matrix"}``."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON in {path}: {exc.msg}", exc.lineno, "line") from exc
    items = data if isinstance(data, list) else data.get("transforms", [data])
    out = {}
    for obj in items:
        t = RigidTransform.from_json(obj)
        out[(t.source, t.target)] = t
    return out


def save_transforms(path: str | Path, transforms) -> None:
    Path(path).write_text(json.dumps([t.to_json() for t in transforms], indent=2) + "\n")
