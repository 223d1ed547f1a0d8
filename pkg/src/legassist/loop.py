"""Closed-loop following: simulate, perceive, estimate walking velocity, command the base."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .blobs import LegObservation
from .control import ControllerConfig, FollowController, SimState, VelocityCommand, closed_loop_step, emit_scan
from .errors import InsufficientDataError
from .gait import GaitReport, estimate_gait, track_legs
from .geometry import transform_point
from .pipeline import Segmenter, perceive
from .raster import GridSpec
from .sim import WalkerModel


def to_odometry(obs: LegObservation, state: SimState) -> LegObservation:
    """Re-express a base-frame observation in the odometry frame (base frame at t = 0)."""
    if not obs.valid:
        return obs
    m = state.base_transform()
    return replace(obs, left=transform_point(obs.left, m), right=transform_point(obs.right, m))


class WalkingVelocityEstimator:
    """Walking velocity in the odometry frame.

    Uses the stride velocity of the recent gait window once two strides are
    visible, and a least-squares slope of the leg midpoint before that.
    """

    def __init__(self, gait_window: float = 6.0, slope_window: float = 1.0):
        self.gait_window = gait_window
        self.slope_window = slope_window
        self.history: deque[LegObservation] = deque()
        self.report: GaitReport | None = None

    def add(self, obs: LegObservation) -> None:
        self.history.append(obs)
        while self.history and obs.timestamp - self.history[0].timestamp > self.gait_window:
            self.history.popleft()

    def velocity(self) -> np.ndarray | None:
        valid = [o for o in self.history if o.valid]
        if len(valid) < 3:
            return None
        try:
            self.report = estimate_gait(track_legs(self.history))
            return self.report.velocity_vector()
        except InsufficientDataError:
            self.report = None
        t_end = valid[-1].timestamp
        recent = [o for o in valid if t_end - o.timestamp <= self.slope_window]
        if len(recent) < 3:
            return None
        t = np.array([o.timestamp for o in recent])
        mid = np.array([o.midpoint[:2] for o in recent])
        slope = np.polyfit(t - t.mean(), mid, 1)[0]
        return slope


@dataclass
class FollowLog:
    records: list[dict] = field(default_factory=list)
    observations: list[LegObservation] = field(default_factory=list)
    commands: list[VelocityCommand] = field(default_factory=list)
    distances: list[float] = field(default_factory=list)
    times: list[float] = field(default_factory=list)

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r) + "\n")


def initial_state(speed: float = 0.5, stride_length: float = 1.0, standoff: float = 0.6,
                  seed: int = 0, **kwargs) -> SimState:
    """Base at the origin facing +x; walker ``standoff`` behind it, walking along +x."""
    walker = WalkerModel(x=-standoff, y=0.0, heading=0.0, speed=speed, stride_length=stride_length)
    return emit_scan(SimState(0.0, (0.0, 0.0, 0.0), walker, seed=seed, **kwargs))


def run_follow(state: SimState, segmenter: Segmenter, duration: float, dt: float = 0.1,
               cfg: ControllerConfig = ControllerConfig(),
               spec: GridSpec = GridSpec()) -> FollowLog:
    controller = FollowController(cfg)
    estimator = WalkingVelocityEstimator()
    log = FollowLog()
    cmd = VelocityCommand()
    person_base = None
    steps = int(round(duration / dt))
    for _ in range(steps):
        seen = perceive(state.scan, segmenter, state.laser_pose, spec)
        odom = to_odometry(seen.robot, state)
        estimator.add(odom)
        if seen.robot.valid:
            person_base = np.asarray(seen.robot.midpoint[:2])
        v_odom = estimator.velocity()
        if person_base is not None:
            v_base = np.zeros(2)
            if v_odom is not None:
                yaw = state.base[2]
                c, s = math.cos(yaw), math.sin(yaw)
                v_base = np.array([c * v_odom[0] + s * v_odom[1], -s * v_odom[0] + c * v_odom[1]])
            cmd = controller.update(v_base, person_base, state.t)
        else:
            cmd = VelocityCommand(timestamp=state.t)
        log.observations.append(odom)
        log.commands.append(cmd)
        log.distances.append(state.distance())
        log.times.append(state.t)
        log.records.append({
            "t": round(state.t, 9),
            "base": [state.base[0], state.base[1], state.base[2]],
            "person": [state.walker.x, state.walker.y],
            "cmd": [cmd.vx, cmd.vy, cmd.omega],
        })
        state = closed_loop_step(state, cmd, dt)
    return log


def gait_from_log(log: FollowLog) -> GaitReport:
    return estimate_gait(track_legs(log.observations))


def simulate_walk(speed: float, stride_length: float, duration: float, seed: int = 0,
                  standoff: float = 1.0, dt: float = 0.1):
    """Scans of a walker followed by an ideal base holding ``standoff`` exactly.

    Returns (scans, odometry poses, ground-truth dict); no perception in the loop.
    """
    state = initial_state(speed, stride_length, standoff, seed=seed)
    scans, odom = [], []
    cmd = VelocityCommand(speed, 0.0, 0.0)
    for _ in range(int(round(duration / dt))):
        scans.append(state.scan)
        odom.append(state.base)
        state = closed_loop_step(state, cmd, dt)
    truth = {"speed": speed, "stride_length": stride_length,
             "cadence": state.walker.cadence, "seed": seed}
    return scans, odom, truth
