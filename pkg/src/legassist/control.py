"""Person-following velocity commands and an ideal omnidirectional base."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgumentError
from .geometry import FrameId, Point3, RigidTransform, compose, invert, transform_point
from .raster import LaserScan
from .sim import (DEFAULT_LASER_POSE, ClutterBox, LaserSpec, LegDisk, Scene, WalkerModel,
                  cast_with_labels, step_walker)


@dataclass(frozen=True)
class ControllerConfig:
    gain: float = 1.0  # feed-forward on the walking velocity
    standoff_gain: float = 1.0  # 1/s, on the distance error
    heading_gain: float = 1.0  # 1/s, on the walking-direction angle
    deadband: float = 0.02  # m/s
    distance_deadband: float = 0.02  # m
    v_max: float = 0.8
    omega_max: float = 0.5
    alpha: float = 0.5  # low-pass: new = alpha*target + (1 - alpha)*old
    standoff: float = 0.6

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise InvalidArgumentError("alpha must be in (0, 1]")
        if self.v_max <= 0 or self.omega_max <= 0 or self.deadband < 0 or self.standoff < 0:
            raise InvalidArgumentError(f"invalid controller config {self}")


@dataclass(frozen=True)
class VelocityCommand:
    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0
    timestamp: float = 0.0

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    def satisfies(self, cfg: ControllerConfig, tol: float = 1e-12) -> bool:
        return self.speed <= cfg.v_max + tol and abs(self.omega) <= cfg.omega_max + tol


def _wrap(a: float) -> float:
    return math.atan2(math.sin(a), math.cos(a))


def compute_command(walk_velocity, person, cfg: ControllerConfig = ControllerConfig(),
                    previous: VelocityCommand | None = None,
                    timestamp: float = 0.0) -> VelocityCommand:
    """One controller update from the walking velocity and person position (both in R).

    target = gain*v_walk + standoff_gain*(distance - standoff)*bearing, then
    first-order smoothing against ``previous``, a deadband, and saturation.
    """
    v = np.asarray(walk_velocity, dtype=float)[:2]
    p = np.asarray(person, dtype=float)[:2]
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(p))):
        raise InvalidArgumentError("controller inputs must be finite")
    dist = float(np.hypot(*p))
    err = dist - cfg.standoff
    walking = cfg.gain * float(np.hypot(*v)) >= cfg.deadband
    if not walking and abs(err) < cfg.distance_deadband:
        return VelocityCommand(0.0, 0.0, 0.0, timestamp)

    target = cfg.gain * v
    if abs(err) >= cfg.distance_deadband and dist > 0:
        target = target + cfg.standoff_gain * err * p / dist
    omega = cfg.heading_gain * _wrap(math.atan2(v[1], v[0])) if walking else 0.0

    prev = previous or VelocityCommand()
    a = cfg.alpha
    out = a * target + (1 - a) * np.array([prev.vx, prev.vy])
    omega = a * omega + (1 - a) * prev.omega
    speed = float(np.hypot(*out))
    if speed < cfg.deadband:
        out = np.zeros(2)
    elif speed > cfg.v_max:
        out = out * (cfg.v_max / speed)
    omega = float(np.clip(omega, -cfg.omega_max, cfg.omega_max))
    return VelocityCommand(float(out[0]), float(out[1]), omega, timestamp)


class FollowController:
    """Stateful wrapper holding the smoothing filter."""

    def __init__(self, cfg: ControllerConfig = ControllerConfig()):
        self.cfg = cfg
        self.last: VelocityCommand | None = None

    def update(self, walk_velocity, person, timestamp: float = 0.0) -> VelocityCommand:
        self.last = compute_command(walk_velocity, person, self.cfg, self.last, timestamp)
        return self.last


# ---------------------------------------------------------------- simulation

@dataclass(frozen=True)
class SimState:
    """World-frame state of the base, the walker and static clutter."""

    t: float
    base: tuple[float, float, float]  # x, y, yaw
    walker: WalkerModel
    clutter: tuple[ClutterBox, ...] = ()
    laser_pose: RigidTransform = DEFAULT_LASER_POSE
    laser: LaserSpec = LaserSpec()
    seed: int = 0
    step: int = 0
    scan: LaserScan | None = None
    scan_labels: np.ndarray | None = None

    def base_transform(self) -> RigidTransform:
        """Current base pose as a transform into the odometry frame.

        The odometry frame is the base frame at t = 0, so both ends carry the R tag.
        """
        x, y, yaw = self.base
        return RigidTransform.planar(x, y, yaw, FrameId.ROBOT_BASE, FrameId.ROBOT_BASE)

    def person_in_base(self) -> np.ndarray:
        world_to_base = invert(self.base_transform())
        return np.asarray(transform_point(Point3(self.walker.x, self.walker.y), world_to_base))[:2]

    def distance(self) -> float:
        return math.hypot(self.walker.x - self.base[0], self.walker.y - self.base[1])


def _world_to_laser(state: SimState) -> RigidTransform:
    return compose(invert(state.base_transform()), invert(state.laser_pose))


def scene_in_laser(state: SimState) -> Scene:
    m = _world_to_laser(state)
    legs = tuple(LegDisk(transform_point(leg.center, m)._replace(z=0.0), leg.radius)
                 for leg in state.walker.legs())
    yaw = m.yaw
    boxes = []
    for b in state.clutter:
        c = transform_point(Point3(b.cx, b.cy), m)
        boxes.append(replace(b, cx=c.x, cy=c.y, yaw=b.yaw + yaw))
    return Scene(legs, tuple(boxes), state.laser_pose, state.seed)


def emit_scan(state: SimState) -> SimState:
    scene = scene_in_laser(state)
    scan, labels = cast_with_labels(scene, state.laser, state.seed * 1_000_003 + state.step,
                                    timestamp=state.t)
    return replace(state, scan=scan, scan_labels=labels)


def closed_loop_step(state: SimState, command: VelocityCommand, dt: float) -> SimState:
    """Integrate the base under ``command`` (ideal omnidirectional), step the
    walker, and emit the next rear scan."""
    if not 0 < dt <= 0.1:
        raise InvalidArgumentError(f"dt must be in (0, 0.1], got {dt}")
    x, y, yaw = state.base
    mid = yaw + 0.5 * command.omega * dt
    c, s = math.cos(mid), math.sin(mid)
    base = (x + (c * command.vx - s * command.vy) * dt,
            y + (s * command.vx + c * command.vy) * dt,
            _wrap(yaw + command.omega * dt))
    walker, _ = step_walker(state.walker, dt)
    nxt = replace(state, t=state.t + dt, base=base, walker=walker, step=state.step + 1)
    return emit_scan(nxt)
